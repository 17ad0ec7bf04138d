//! Accuracy metrics for batches of designs: per-design mean absolute error
//! and the derived average/minimum accuracies and R² scores, serialized as a
//! flat JSON report.

use crate::oracle::{SpectralResponse, SPECTRUM_POINTS};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metrics need at least one design")]
    Empty,
    #[error("mean absolute error {0} outside [0, 2]")]
    MaeRange(f64),
}

/// Per-design comparison of a target spectrum against the achieved one.
#[derive(Clone, Copy, Debug)]
pub struct DesignEval {
    pub mae: f64,
    pub mse: f64,
    /// Variance of the target spectrum about its own mean.
    pub var: f64,
}

impl DesignEval {
    pub fn new(target: &SpectralResponse, achieved: &SpectralResponse) -> Self {
        let n = SPECTRUM_POINTS as f64;
        let mut mae = 0.0;
        let mut mse = 0.0;
        for (t, a) in target.values().iter().zip(achieved.values()) {
            mae += (t - a).abs();
            mse += (t - a) * (t - a);
        }
        mae /= n;
        mse /= n;
        let mean = target.values().iter().sum::<f64>() / n;
        let var = target.values().iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
        DesignEval { mae, mse, var }
    }
}

/// R² aggregation: `Mean` averages the per-design MSE/Var ratios before
/// subtracting from 1; `Literal` sums them unaveraged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum R2Mode {
    Mean,
    Literal,
}

/// Aggregate metrics over m designs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae_ave: f64,
    pub acc_ave: f64,
    pub acc_min: f64,
    pub r2_ave: f64,
    pub r2_paper_literal: f64,
    pub m: usize,
    /// Designs with zero-variance targets, excluded from both R² figures.
    pub skipped_zero_var: usize,
}

/// Mean of the per-design MAEs.
pub fn mae_ave(evals: &[DesignEval]) -> Result<f64, MetricsError> {
    if evals.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(evals.iter().map(|e| e.mae).sum::<f64>() / evals.len() as f64)
}

/// Accuracy from an average MAE over [-1,1]-bounded responses: 1 - MAE/2.
pub fn acc_ave(mae_ave: f64) -> Result<f64, MetricsError> {
    if !(0.0..=2.0).contains(&mae_ave) {
        return Err(MetricsError::MaeRange(mae_ave));
    }
    Ok(1.0 - mae_ave / 2.0)
}

/// Accuracy of the worst design: 1 - max_i MAE(i)/2.
pub fn acc_min(evals: &[DesignEval]) -> Result<f64, MetricsError> {
    if evals.is_empty() {
        return Err(MetricsError::Empty);
    }
    let worst = evals.iter().map(|e| e.mae).fold(0.0f64, f64::max);
    Ok(1.0 - worst / 2.0)
}

/// R² over the design set. Zero-variance targets are skipped; the second
/// element of the return value counts them.
pub fn r2(evals: &[DesignEval], mode: R2Mode) -> Result<(f64, usize), MetricsError> {
    if evals.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sum_ratio = 0.0;
    let mut used = 0usize;
    for e in evals {
        if e.var > 0.0 {
            sum_ratio += e.mse / e.var;
            used += 1;
        }
    }
    let skipped = evals.len() - used;
    if used == 0 {
        return Err(MetricsError::Empty);
    }
    let value = match mode {
        R2Mode::Mean => 1.0 - sum_ratio / used as f64,
        R2Mode::Literal => 1.0 - sum_ratio,
    };
    Ok((value, skipped))
}

/// Full report over a design set, with R² in both modes.
pub fn report(evals: &[DesignEval]) -> Result<MetricsReport, MetricsError> {
    let mae = mae_ave(evals)?;
    let (r2_mean, skipped) = r2(evals, R2Mode::Mean)?;
    let (r2_lit, _) = r2(evals, R2Mode::Literal)?;
    Ok(MetricsReport {
        mae_ave: mae,
        acc_ave: acc_ave(mae)?,
        acc_min: acc_min(evals)?,
        r2_ave: r2_mean,
        r2_paper_literal: r2_lit,
        m: evals.len(),
        skipped_zero_var: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::simulate;
    use crate::pattern::random_pattern;

    fn eval_with(mae: f64, mse: f64, var: f64) -> DesignEval {
        DesignEval { mae, mse, var }
    }

    #[test]
    fn mae_ave_arithmetic() {
        let evals = [eval_with(0.02, 0.0, 1.0), eval_with(0.08, 0.0, 1.0)];
        assert!((mae_ave(&evals).unwrap() - 0.05).abs() < 1e-15);
        assert!(matches!(mae_ave(&[]), Err(MetricsError::Empty)));
    }

    #[test]
    fn mae_of_identical_and_opposite_responses() {
        let p = random_pattern(1);
        let r = simulate(&p);
        let same = DesignEval::new(&r, &r);
        assert_eq!(same.mae, 0.0);
        assert_eq!(same.mse, 0.0);
        let ones = SpectralResponse::from_slice(&[1.0; 100]).unwrap();
        let zeros = SpectralResponse::from_slice(&[0.0; 100]).unwrap();
        let e = DesignEval::new(&ones, &zeros);
        assert!((e.mae - 1.0).abs() < 1e-15);
    }

    #[test]
    fn acc_ave_reference_values() {
        assert!((acc_ave(0.0533).unwrap() - 0.97335).abs() < 5e-5);
        assert!((acc_ave(0.0154).unwrap() - 0.9923).abs() < 5e-5);
        assert_eq!(acc_ave(0.0).unwrap(), 1.0);
        assert!(matches!(acc_ave(2.5), Err(MetricsError::MaeRange(_))));
    }

    #[test]
    fn acc_min_reference_values() {
        let evals = [eval_with(0.1, 0.0, 1.0), eval_with(0.5736, 0.0, 1.0)];
        assert!((acc_min(&evals).unwrap() - 0.7132).abs() < 5e-5);
        let single = [eval_with(0.3, 0.0, 1.0)];
        let m = mae_ave(&single).unwrap();
        assert_eq!(acc_min(&single).unwrap(), acc_ave(m).unwrap());
    }

    #[test]
    fn acc_min_never_exceeds_acc_ave() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let evals: Vec<DesignEval> =
                (0..8).map(|_| eval_with(rng.gen_range(0.0..2.0), 0.1, 1.0)).collect();
            let a = acc_ave(mae_ave(&evals).unwrap()).unwrap();
            let m = acc_min(&evals).unwrap();
            assert!(m <= a + 1e-15);
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn r2_modes() {
        let perfect = [eval_with(0.0, 0.0, 1.0); 3];
        assert_eq!(r2(&perfect, R2Mode::Mean).unwrap().0, 1.0);
        assert_eq!(r2(&perfect, R2Mode::Literal).unwrap().0, 1.0);

        let one = [eval_with(0.1, 0.05, 0.5)];
        assert_eq!(r2(&one, R2Mode::Mean).unwrap(), r2(&one, R2Mode::Literal).unwrap());

        let three = [eval_with(0.0, 0.1, 1.0); 3];
        assert!((r2(&three, R2Mode::Mean).unwrap().0 - 0.9).abs() < 1e-12);
        assert!((r2(&three, R2Mode::Literal).unwrap().0 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn r2_skips_zero_variance_targets() {
        let evals = [eval_with(0.0, 0.1, 1.0), eval_with(0.0, 0.5, 0.0)];
        let (v, skipped) = r2(&evals, R2Mode::Mean).unwrap();
        assert_eq!(skipped, 1);
        assert!((v - 0.9).abs() < 1e-12);
    }

    #[test]
    fn constant_mean_predictor_r2_is_near_zero() {
        // predicting each target's own mean gives MSE == Var per design
        let mut evals = Vec::new();
        for seed in 0..20 {
            let r = simulate(&random_pattern(seed));
            let mean = r.values().iter().sum::<f64>() / 100.0;
            let pred = SpectralResponse::from_slice(&[mean; 100]).unwrap();
            evals.push(DesignEval::new(&r, &pred));
        }
        let (v, _) = r2(&evals, R2Mode::Mean).unwrap();
        assert!(v.abs() < 1e-9, "{v}");
    }

    #[test]
    fn report_is_permutation_invariant_and_consistent() {
        let mut evals: Vec<DesignEval> = (0..10)
            .map(|s| {
                let t = simulate(&random_pattern(s));
                let a = simulate(&random_pattern(s + 100));
                DesignEval::new(&t, &a)
            })
            .collect();
        let r1 = report(&evals).unwrap();
        evals.reverse();
        let r2_ = report(&evals).unwrap();
        assert!((r1.mae_ave - r2_.mae_ave).abs() < 1e-12);
        assert_eq!(r1.acc_min, r2_.acc_min);
        assert!((r1.acc_ave - (1.0 - r1.mae_ave / 2.0)).abs() < 1e-12);
        let json = serde_json::to_string(&r1).unwrap();
        for key in
            ["mae_ave", "acc_ave", "acc_min", "r2_ave", "r2_paper_literal", "\"m\"", "skipped_zero_var"]
        {
            assert!(json.contains(key), "missing {key} in {json}");
        }
    }
}
