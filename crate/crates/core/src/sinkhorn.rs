//! Entropic-regularized optimal transport between weighted point sets, plus
//! the single-target special case used as the adversarial training loss.

use crate::autodiff::{Real, Tape, Var};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OtError {
    #[error("point dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("weights must be nonnegative and sum to 1 (sum = {0})")]
    Weights(f64),
    #[error("cloud must contain at least one point")]
    Empty,
    #[error("kernel underflowed to zero; increase epsilon (epsilon = {0})")]
    Underflow(f64),
    #[error("invalid config: {0}")]
    Config(&'static str),
}

/// n points of dimension d with a probability vector of weights.
#[derive(Clone, Debug)]
pub struct PointCloud {
    points: Vec<f64>,
    n: usize,
    dim: usize,
    weights: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<f64>, dim: usize, weights: Vec<f64>) -> Result<Self, OtError> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(OtError::Empty);
        }
        let n = points.len() / dim;
        if weights.len() != n {
            return Err(OtError::Weights(f64::NAN));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() >= 1e-9 {
            return Err(OtError::Weights(sum));
        }
        Ok(PointCloud { points, n, dim, weights })
    }

    /// 1-D points with uniform weights.
    pub fn uniform_1d(values: &[f64]) -> Result<Self, OtError> {
        let n = values.len();
        PointCloud::new(values.to_vec(), 1, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    /// L1 marginal violation at which iteration stops.
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig { epsilon: 0.1, max_iters: 100, tol: 1e-6 }
    }
}

/// C[i,j] = squared Euclidean distance between a_i and b_j, row-major [n, m].
pub fn cost_matrix(a: &PointCloud, b: &PointCloud) -> Result<Vec<f64>, OtError> {
    if a.dim != b.dim {
        return Err(OtError::Dimension(a.dim, b.dim));
    }
    let mut c = vec![0.0; a.n * b.n];
    for i in 0..a.n {
        let pi = a.point(i);
        for j in 0..b.n {
            let pj = b.point(j);
            c[i * b.n + j] = pi.iter().zip(pj).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    }
    Ok(c)
}

/// Transport cost and coupling from alternating row/column scalings of
/// K = exp(-C/eps). The returned value is <P, C> only; the entropy term is
/// not included. Stops when both marginals match within `tol` (L1) or after
/// `max_iters` sweeps.
pub fn sinkhorn_distance(
    a: &PointCloud,
    b: &PointCloud,
    cfg: &SinkhornConfig,
) -> Result<(f64, Vec<f64>), OtError> {
    if cfg.epsilon <= 0.0 {
        return Err(OtError::Config("epsilon must be positive"));
    }
    if cfg.max_iters == 0 {
        return Err(OtError::Config("max_iters must be at least 1"));
    }
    let c = cost_matrix(a, b)?;
    let (n, m) = (a.n, b.n);
    let k: Vec<f64> = c.iter().map(|&v| (-v / cfg.epsilon).exp()).collect();
    for i in 0..n {
        if k[i * m..(i + 1) * m].iter().all(|&v| v == 0.0) {
            return Err(OtError::Underflow(cfg.epsilon));
        }
    }
    for j in 0..m {
        if (0..n).all(|i| k[i * m + j] == 0.0) {
            return Err(OtError::Underflow(cfg.epsilon));
        }
    }

    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    for _ in 0..cfg.max_iters {
        for i in 0..n {
            let kv: f64 = (0..m).map(|j| k[i * m + j] * v[j]).sum();
            if kv == 0.0 {
                return Err(OtError::Underflow(cfg.epsilon));
            }
            u[i] = a.weights[i] / kv;
        }
        for j in 0..m {
            let ku: f64 = (0..n).map(|i| k[i * m + j] * u[i]).sum();
            if ku == 0.0 {
                return Err(OtError::Underflow(cfg.epsilon));
            }
            v[j] = b.weights[j] / ku;
        }
        // column update just enforced column marginals; check rows
        let row_err: f64 = (0..n)
            .map(|i| {
                let r: f64 = (0..m).map(|j| u[i] * k[i * m + j] * v[j]).sum();
                (r - a.weights[i]).abs()
            })
            .sum();
        if row_err < cfg.tol {
            break;
        }
    }

    let mut plan = vec![0.0; n * m];
    let mut value = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = u[i] * k[i * m + j] * v[j];
            plan[i * m + j] = p;
            value += p * c[i * m + j];
        }
    }
    Ok((value.max(0.0), plan))
}

/// Adversarial loss toward a scalar target: each row of `outputs` is read as
/// a 1-D point cloud with uniform weights and transported onto the single
/// point `target`. With a one-point target the coupling is forced, so the
/// transport cost collapses to mean((out - t)^2); this builds exactly that
/// on the tape and returns the batch mean.
pub fn sinkhorn_to_target<T: Real>(
    tape: &mut Tape<T>,
    outputs: Var,
    target: f64,
) -> Result<Var, crate::autodiff::AdError> {
    let n: usize = tape.shape(outputs).iter().product();
    if n == 0 {
        return Err(crate::autodiff::AdError::Contract("empty outputs".into()));
    }
    let d = tape.add_scalar(outputs, T::from_f64(-target));
    let sq = tape.try_mul(d, d)?;
    let total = tape.sum_all(sq);
    Ok(tape.scale(total, T::from_f64(1.0 / n as f64)))
}
