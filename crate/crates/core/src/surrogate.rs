//! Forward model: pattern -> predicted 100-point spectral response.
//!
//! Residual CNN backbone, flatten projection to a token sequence, a mean
//! class token with learnable position embeddings, one multi-head attention
//! layer, and a linear head read at the class-token position.

use crate::autodiff::{Real, Tape, Var};
use crate::config::TrainConfig;
use crate::dataset::DesignRecord;
use crate::metrics::{self, DesignEval, R2Mode};
use crate::nn::{
    Adam, BatchNorm2d, Conv2d, Linear, MultiHeadAttention, PRelu, ParamRegistry, ResidualBlock,
};
use crate::oracle::SpectralResponse;
use crate::pattern::TernaryPattern;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Architecture knobs; the defaults give the desk-scale network, `toy()` an
/// 8x8 variant small enough for finite-difference gradient checks.
#[derive(Clone, Debug)]
pub struct SurrogateShape {
    pub input: usize,
    pub stage_channels: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub tokens: usize,
    pub token_dim: usize,
    pub heads: usize,
    pub output: usize,
}

impl SurrogateShape {
    pub fn full() -> Self {
        SurrogateShape {
            input: 32,
            stage_channels: vec![16, 32, 64, 64],
            stage_strides: vec![2, 2, 2, 1],
            tokens: 16,
            token_dim: 64,
            heads: 4,
            output: 100,
        }
    }

    pub fn toy() -> Self {
        SurrogateShape {
            input: 8,
            stage_channels: vec![4, 8],
            stage_strides: vec![2, 1],
            tokens: 4,
            token_dim: 8,
            heads: 2,
            output: 10,
        }
    }

    pub fn final_spatial(&self) -> usize {
        self.stage_strides.iter().fold(self.input, |s, &st| s / st)
    }

    pub fn flat_features(&self) -> usize {
        let s = self.final_spatial();
        self.stage_channels.last().unwrap() * s * s
    }
}

struct Stage {
    down: Conv2d,
    bn: BatchNorm2d,
    act: PRelu,
    res: ResidualBlock,
}

/// The surrogate network. Parameters live on the tape it was built with;
/// forward passes append nodes after the caller's `mark()`.
pub struct FResNet {
    pub shape: SurrogateShape,
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    stem_act: PRelu,
    stages: Vec<Stage>,
    proj: Linear,
    pos: Var,
    attn: MultiHeadAttention,
    head: Linear,
    pub reg: ParamRegistry,
}

impl FResNet {
    pub fn new<E: Real>(tape: &mut Tape<E>, shape: SurrogateShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reg = ParamRegistry::new();
        let first = shape.stage_channels[0];
        let stem = Conv2d::new(tape, &mut reg, "stem", &mut rng, 1, first, 3, 1, 1, true);
        let stem_bn = BatchNorm2d::new(tape, &mut reg, "stem_bn", first, true);
        let stem_act = PRelu::new(tape, &mut reg, "stem_act", true);
        let mut stages = Vec::new();
        let mut in_c = first;
        for (i, (&c, &s)) in shape.stage_channels.iter().zip(&shape.stage_strides).enumerate() {
            let p = format!("stage{i}");
            stages.push(Stage {
                down: Conv2d::new(tape, &mut reg, &format!("{p}.down"), &mut rng, in_c, c, 3, s, 1, true),
                bn: BatchNorm2d::new(tape, &mut reg, &format!("{p}.bn"), c, true),
                act: PRelu::new(tape, &mut reg, &format!("{p}.act"), true),
                res: ResidualBlock::new(tape, &mut reg, &format!("{p}.res"), &mut rng, c, true),
            });
            in_c = c;
        }
        let token_feats = shape.tokens * shape.token_dim;
        let proj =
            Linear::new(tape, &mut reg, "proj", &mut rng, shape.flat_features(), token_feats, true);
        let pos_len = (shape.tokens + 1) * shape.token_dim;
        let pos = tape.leaf(&[pos_len], vec![E::from_f64(0.0); pos_len], true);
        reg.register("pos", pos, true);
        let attn = MultiHeadAttention::new(tape, &mut reg, "attn", &mut rng, shape.heads, shape.token_dim, true);
        let head = Linear::new(tape, &mut reg, "head", &mut rng, shape.token_dim, shape.output, true);
        FResNet { shape, stem, stem_bn, stem_act, stages, proj, pos, attn, head, reg }
    }

    /// x: [b, 1, n, n] codes as reals -> [b, output], unclamped.
    pub fn forward<E: Real>(&self, tape: &mut Tape<E>, x: Var, train: bool) -> Var {
        let b = tape.shape(x)[0];
        let mut h = self.stem.forward(tape, x);
        h = self.stem_bn.forward(tape, h, train);
        h = self.stem_act.forward(tape, h);
        for st in &self.stages {
            h = st.down.forward(tape, h);
            h = st.bn.forward(tape, h, train);
            h = st.act.forward(tape, h);
            h = st.res.forward(tape, h, train);
        }
        let flat = tape.reshape(h, &[b, self.shape.flat_features()]);
        let tokens_flat = self.proj.forward(tape, flat);
        let (nt, d) = (self.shape.tokens, self.shape.token_dim);
        let toks = tape.reshape(tokens_flat, &[b, nt, d]);
        // class token: mean over the token axis
        let td = tape.permute(toks, &[0, 2, 1]);
        let td = tape.reshape(td, &[b * d, nt]);
        let cls = tape.sum_axis(td, 1);
        let cls = tape.scale(cls, E::from_f64(1.0 / nt as f64));
        let cls = tape.reshape(cls, &[b, 1, d]);
        let seq = tape.concat(&[cls, toks], 1);
        let seq_flat = tape.reshape(seq, &[b, (nt + 1) * d]);
        let seq_flat = tape.add_batch_bias(seq_flat, self.pos);
        let seq = tape.reshape(seq_flat, &[b, nt + 1, d]);
        let out = self.attn.forward(tape, seq);
        let cls_out = tape.slice(out, 1, 0, 1);
        let cls_out = tape.reshape(cls_out, &[b, d]);
        self.head.forward(tape, cls_out)
    }

    /// Batched eval-mode prediction; appends nothing permanent to the tape.
    pub fn predict<E: Real>(
        &self,
        tape: &mut Tape<E>,
        patterns: &[&TernaryPattern],
    ) -> Vec<Vec<f64>> {
        assert!(!patterns.is_empty());
        let x = pattern_batch(tape, patterns);
        let y = self.forward(tape, x, false);
        let vals = tape.value(y).to_vec();
        let out = vals
            .chunks(self.shape.output)
            .map(|c| c.iter().map(|&v| Real::to_f64(v)).collect())
            .collect();
        tape.reset();
        out
    }
}

/// Stack patterns into a [b, 1, n, n] constant of their codes.
pub fn pattern_batch<E: Real>(tape: &mut Tape<E>, patterns: &[&TernaryPattern]) -> Var {
    let n = patterns[0].size();
    let mut data = Vec::with_capacity(patterns.len() * n * n);
    for p in patterns {
        assert_eq!(p.size(), n);
        data.extend(p.levels().iter().map(|&l| E::from_f64(l as f64 / 2.0)));
    }
    tape.constant(&[patterns.len(), 1, n, n], data)
}

/// mean |a - b| over every element of a batch.
pub fn l1_loss<E: Real>(tape: &mut Tape<E>, pred: Var, target: Var) -> Var {
    let d = tape.sub(pred, target);
    let a = tape.abs(d);
    tape.mean_all(a)
}

#[derive(Clone, Debug, Default)]
pub struct SurrogateTrainReport {
    pub train_l1: Vec<f64>,
    pub test_l1: Vec<f64>,
    pub final_mae_ave: f64,
    pub final_acc_ave: f64,
    pub final_r2: f64,
}

/// Train on oracle-labeled records with Adam and an L1 objective; the
/// returned model lives on `tape`. Deterministic given the config seeds.
pub fn train_surrogate<E: Real>(
    tape: &mut Tape<E>,
    train_set: &[DesignRecord],
    test_set: &[DesignRecord],
    cfg: &TrainConfig,
) -> (FResNet, SurrogateTrainReport) {
    assert!(!train_set.is_empty() && !test_set.is_empty(), "empty dataset");
    let model = FResNet::new(tape, SurrogateShape::full(), cfg.surrogate_seed);
    let mut opt = Adam::new(tape, model.reg.trainable(), cfg.lr, cfg.beta1, cfg.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.surrogate_seed ^ 0x5u64);
    tape.mark();

    let mut report = SurrogateTrainReport::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.surrogate_epochs {
        // L1's gradient magnitude does not shrink near the optimum, so a
        // fixed step keeps bouncing; halve the rate over the run.
        let frac = epoch as f64 / cfg.surrogate_epochs.max(1) as f64;
        opt.lr = E::from_f64(cfg.lr * 0.5f64.powf(3.0 * frac));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.surrogate_batch) {
            let pats: Vec<&TernaryPattern> = chunk.iter().map(|&i| &train_set[i].pattern).collect();
            let x = pattern_batch(tape, &pats);
            let pred = model.forward(tape, x, true);
            let target = response_batch(tape, chunk.iter().map(|&i| &train_set[i].response));
            let loss = l1_loss(tape, pred, target);
            epoch_loss += tape.value(loss)[0].to_f64();
            batches += 1;
            tape.zero_grad();
            tape.backward(loss);
            opt.step(tape);
            tape.reset();
        }
        report.train_l1.push(epoch_loss / batches as f64);
        report.test_l1.push(eval_l1(tape, &model, test_set, cfg.surrogate_batch));
    }

    let evals = eval_designs(tape, &model, test_set, cfg.surrogate_batch);
    report.final_mae_ave = metrics::mae_ave(&evals).unwrap();
    report.final_acc_ave = metrics::acc_ave(report.final_mae_ave).unwrap();
    report.final_r2 = metrics::r2(&evals, R2Mode::Mean).unwrap().0;
    (model, report)
}

fn response_batch<'a, E: Real>(
    tape: &mut Tape<E>,
    responses: impl Iterator<Item = &'a SpectralResponse>,
) -> Var {
    let mut data = Vec::new();
    let mut count = 0usize;
    for r in responses {
        data.extend(r.values().iter().map(|&v| E::from_f64(v)));
        count += 1;
    }
    tape.constant(&[count, data.len() / count], data)
}

/// Eval-mode L1 over a record set.
pub fn eval_l1<E: Real>(
    tape: &mut Tape<E>,
    model: &FResNet,
    set: &[DesignRecord],
    batch: usize,
) -> f64 {
    let mut total = 0.0;
    for chunk in set.chunks(batch) {
        let pats: Vec<&TernaryPattern> = chunk.iter().map(|r| &r.pattern).collect();
        let preds = model.predict(tape, &pats);
        for (p, r) in preds.iter().zip(chunk) {
            total += p
                .iter()
                .zip(r.response.values())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / p.len() as f64;
        }
    }
    total / set.len() as f64
}

/// Per-record evals of clamped predictions against the stored responses.
pub fn eval_designs<E: Real>(
    tape: &mut Tape<E>,
    model: &FResNet,
    set: &[DesignRecord],
    batch: usize,
) -> Vec<DesignEval> {
    let mut evals = Vec::with_capacity(set.len());
    for chunk in set.chunks(batch) {
        let pats: Vec<&TernaryPattern> = chunk.iter().map(|r| &r.pattern).collect();
        let preds = model.predict(tape, &pats);
        for (p, r) in preds.iter().zip(chunk) {
            let clamped: Vec<f64> = p.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            let achieved = SpectralResponse::from_slice(&clamped).unwrap();
            evals.push(DesignEval::new(&r.response, &achieved));
        }
    }
    evals
}
