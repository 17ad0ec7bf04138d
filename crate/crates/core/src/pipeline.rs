//! End-to-end orchestration shared by the CLI and integration tests: dataset
//! generation, surrogate and GAN training with checkpoints, batch design
//! (generator, SA, random baseline), and evaluation reports.

use crate::annealing::{sa_design_batch, SaConfig, SaTrace};
use crate::autodiff::Tape;
use crate::config::TrainConfig;
use crate::dataset::{Dataset, DesignRecord};
use crate::gan::{design, train_xgan, Generator};
use crate::metrics::{self, DesignEval, MetricsReport};
use crate::nn::{load_checkpoint, save_checkpoint};
use crate::oracle::{simulate, SpectralResponse};
use crate::pattern::TernaryPattern;
use crate::surrogate::{train_surrogate, FResNet, SurrogateShape, SurrogateTrainReport};
use anyhow::{Context, Result};
use rayon::prelude::*;
use std::path::Path;

/// Generate `samples` oracle-labeled records and write them to `out`.
/// Labeling fans out over the rayon pool; record i always uses seed+i, so
/// output is independent of worker count.
pub fn gen_data(samples: usize, seed: u64, out: &Path) -> Result<Dataset> {
    let records: Vec<DesignRecord> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let pattern = crate::pattern::random_pattern(seed.wrapping_add(i as u64));
            let response = simulate(&pattern);
            DesignRecord { pattern, response }
        })
        .collect();
    let ds = Dataset::new(records);
    ds.save(out).context("writing dataset")?;
    Ok(ds)
}

/// Train the surrogate on a dataset split and persist the checkpoint plus a
/// per-epoch loss CSV next to it.
pub fn run_train_surrogate(
    data: &Dataset,
    cfg: &TrainConfig,
    ckpt: &Path,
) -> Result<SurrogateTrainReport> {
    let (train, test) = data.split(cfg.split);
    let mut tape: Tape<f32> = Tape::new();
    let (model, report) = train_surrogate(&mut tape, train, test, cfg);
    save_checkpoint(&tape, &model.reg, ckpt).context("writing surrogate checkpoint")?;
    let mut csv = String::from("epoch,train_l1,test_l1\n");
    for (e, (tr, te)) in report.train_l1.iter().zip(&report.test_l1).enumerate() {
        csv.push_str(&format!("{e},{tr},{te}\n"));
    }
    std::fs::write(sibling(ckpt, "csv"), csv).context("writing surrogate loss csv")?;
    Ok(report)
}

/// Rebuild the surrogate on a fresh tape from a checkpoint.
pub fn load_surrogate(tape: &mut Tape<f32>, ckpt: &Path) -> Result<FResNet> {
    let model = FResNet::new(tape, SurrogateShape::full(), 0);
    load_checkpoint(tape, &model.reg, ckpt)
        .with_context(|| format!("loading surrogate checkpoint {}", ckpt.display()))?;
    tape.mark();
    Ok(model)
}

/// Train the GAN against a frozen surrogate checkpoint. Writes the generator
/// checkpoint to `gen_ckpt`, the discriminator alongside it, and the
/// training-curve CSV next to the generator.
pub fn run_train_xgan(
    data: &Dataset,
    surrogate_ckpt: &Path,
    cfg: &TrainConfig,
    gen_ckpt: &Path,
) -> Result<crate::gan::XganTrainReport> {
    let (train, _) = data.split(cfg.split);
    let mut tape: Tape<f32> = Tape::new();
    let surrogate = load_surrogate(&mut tape, surrogate_ckpt)?;
    let (gen, disc, report) = train_xgan(&mut tape, train, &surrogate, cfg);
    save_checkpoint(&tape, &gen.reg, gen_ckpt).context("writing generator checkpoint")?;
    save_checkpoint(&tape, &disc.reg, sibling(gen_ckpt, "disc"))
        .context("writing discriminator checkpoint")?;
    std::fs::write(sibling(gen_ckpt, "csv"), report.to_csv())
        .context("writing training curve csv")?;
    Ok(report)
}

/// Rebuild the generator on a fresh tape from a checkpoint.
pub fn load_generator(tape: &mut Tape<f32>, ckpt: &Path) -> Result<Generator> {
    let gen = Generator::new(tape, 0);
    load_checkpoint(tape, &gen.reg, ckpt)
        .with_context(|| format!("loading generator checkpoint {}", ckpt.display()))?;
    tape.mark();
    Ok(gen)
}

/// One designed pattern per target via sample-until-good against the oracle.
/// Target i uses attempt seeds derived from `seed + i`.
pub fn design_batch(
    gen: &Generator,
    tape: &mut Tape<f32>,
    targets: &[SpectralResponse],
    tau: f64,
    max_attempts: usize,
    seed: u64,
) -> Vec<(TernaryPattern, f64)> {
    targets
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut eval = |p: &TernaryPattern| simulate(p).mae(c);
            design(tape, gen, c, &mut eval, tau, max_attempts, seed.wrapping_add(i as u64))
        })
        .collect()
}

/// One random-pattern baseline design per target: best of `attempts` random
/// patterns under the oracle.
pub fn random_design_batch(
    targets: &[SpectralResponse],
    attempts: usize,
    seed: u64,
) -> Vec<(TernaryPattern, f64)> {
    targets
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            (0..attempts)
                .map(|a| {
                    let p = crate::pattern::random_pattern(
                        seed.wrapping_add((i * attempts + a) as u64),
                    );
                    let mae = simulate(&p).mae(c);
                    (p, mae)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
        })
        .collect()
}

/// One SA design per target with the surrogate objective, run in lockstep so
/// each move costs a single batched surrogate call.
pub fn sa_batch(
    surrogate: &FResNet,
    tape: &mut Tape<f32>,
    targets: &[SpectralResponse],
    sa: &SaConfig,
) -> Vec<(TernaryPattern, SaTrace)> {
    let mut objective = |batch: &[(usize, TernaryPattern)]| {
        let pats: Vec<&TernaryPattern> = batch.iter().map(|(_, p)| p).collect();
        let preds = surrogate.predict(tape, &pats);
        batch
            .iter()
            .zip(preds)
            .map(|((i, _), pred)| {
                pred.iter()
                    .zip(targets[*i].values())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / pred.len() as f64
            })
            .collect()
    };
    sa_design_batch(targets.len(), &mut objective, sa)
}

/// Oracle-evaluated metrics of designs against targets, plus per-design MAEs.
pub fn evaluate_oracle(
    designs: &[TernaryPattern],
    targets: &[SpectralResponse],
) -> Result<(MetricsReport, Vec<f64>)> {
    anyhow::ensure!(designs.len() == targets.len(), "design/target count mismatch");
    let evals: Vec<DesignEval> = designs
        .par_iter()
        .zip(targets)
        .map(|(p, t)| DesignEval::new(t, &simulate(p)))
        .collect();
    let maes = evals.iter().map(|e| e.mae).collect();
    Ok((metrics::report(&evals)?, maes))
}

/// Same, but scoring achieved responses with a surrogate instead of the
/// oracle (the evaluation-simulator switch).
pub fn evaluate_surrogate(
    surrogate: &FResNet,
    tape: &mut Tape<f32>,
    designs: &[TernaryPattern],
    targets: &[SpectralResponse],
) -> Result<(MetricsReport, Vec<f64>)> {
    anyhow::ensure!(designs.len() == targets.len(), "design/target count mismatch");
    let mut evals = Vec::with_capacity(designs.len());
    for (chunk, tchunk) in designs.chunks(64).zip(targets.chunks(64)) {
        let pats: Vec<&TernaryPattern> = chunk.iter().collect();
        let preds = surrogate.predict(tape, &pats);
        for (pred, t) in preds.iter().zip(tchunk) {
            let clamped: Vec<f64> = pred.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            let achieved = SpectralResponse::from_slice(&clamped).unwrap();
            evals.push(DesignEval::new(t, &achieved));
        }
    }
    let maes = evals.iter().map(|e| e.mae).collect();
    Ok((metrics::report(&evals)?, maes))
}

fn sibling(path: &Path, ext: &str) -> std::path::PathBuf {
    path.with_extension(ext)
}
