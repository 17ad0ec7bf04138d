//! The named layers and optimizers the network architectures are built from,
//! plus the MSNN checkpoint format.

use crate::autodiff::{numel, Real, Tape, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint magic (expected MSNN)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0:#04x} (expected 0x01)")]
    BadVersion(u8),
    #[error("checkpoint tensor mismatch: {0}")]
    TensorMismatch(String),
}

/// Ordered, named collection of tape leaves. Drives the optimizer and the
/// checkpoint writer; order is registration order and is part of the format.
pub struct ParamRegistry {
    entries: Vec<(String, Var, bool)>,
}

impl Default for ParamRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamRegistry {
    pub fn new() -> Self {
        ParamRegistry { entries: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, var: Var, trainable: bool) {
        self.entries.push((name.into(), var, trainable));
    }

    pub fn trainable(&self) -> Vec<Var> {
        self.entries.iter().filter(|e| e.2).map(|e| e.1).collect()
    }

    pub fn entries(&self) -> &[(String, Var, bool)] {
        &self.entries
    }
}

/// Fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
fn uniform_init<E: Real>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<E> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| E::from_f64(rng.gen_range(-bound..bound))).collect()
}

// ---- layers ---------------------------------------------------------------

pub struct Linear {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn new<E: Real>(
        tape: &mut Tape<E>,
        reg: &mut ParamRegistry,
        name: &str,
        rng: &mut ChaCha8Rng,
        in_f: usize,
        out_f: usize,
        trainable: bool,
    ) -> Self {
        let w = tape.leaf(&[in_f, out_f], uniform_init(rng, in_f * out_f, in_f), trainable);
        let b = tape.leaf(&[out_f], uniform_init(rng, out_f, in_f), trainable);
        reg.register(format!("{name}.w"), w, trainable);
        reg.register(format!("{name}.b"), b, trainable);
        Linear { w, b }
    }

    /// x: [batch, in_f] -> [batch, out_f]
    pub fn forward<E: Real>(&self, tape: &mut Tape<E>, x: Var) -> Var {
        let y = tape.matmul(x, self.w);
        tape.add_batch_bias(y, self.b)
    }
}

pub struct Conv2d {
    pub w: Var,
    pub b: Var,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<E: Real>(
        tape: &mut Tape<E>,
        reg: &mut ParamRegistry,
        name: &str,
        rng: &mut ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        ksize: usize,
        stride: usize,
        pad: usize,
        trainable: bool,
    ) -> Self {
        let fan_in = in_c * ksize * ksize;
        let w = tape.leaf(
            &[out_c, in_c, ksize, ksize],
            uniform_init(rng, out_c * fan_in, fan_in),
            trainable,
        );
        let b = tape.leaf(&[out_c], uniform_init(rng, out_c, fan_in), trainable);
        reg.register(format!("{name}.w"), w, trainable);
        reg.register(format!("{name}.b"), b, trainable);
        Conv2d { w, b, stride, pad }
    }

    pub fn forward<E: Real>(&self, tape: &mut Tape<E>, x: Var) -> Var {
        let y = tape.conv2d(x, self.w, self.stride, self.pad);
        tape.add_channel_bias(y, self.b)
    }
}

pub struct BatchNorm2d {
    pub gamma: Var,
    pub beta: Var,
    pub running_mean: Var,
    pub running_var: Var,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new<E: Real>(
        tape: &mut Tape<E>,
        reg: &mut ParamRegistry,
        name: &str,
        channels: usize,
        trainable: bool,
    ) -> Self {
        let gamma = tape.leaf(&[channels], vec![E::one(); channels], trainable);
        let beta = tape.leaf(&[channels], vec![E::zero(); channels], trainable);
        let running_mean = tape.leaf(&[channels], vec![E::zero(); channels], false);
        let running_var = tape.leaf(&[channels], vec![E::one(); channels], false);
        reg.register(format!("{name}.gamma"), gamma, trainable);
        reg.register(format!("{name}.beta"), beta, trainable);
        reg.register(format!("{name}.running_mean"), running_mean, false);
        reg.register(format!("{name}.running_var"), running_var, false);
        BatchNorm2d { gamma, beta, running_mean, running_var, eps: 1e-5, momentum: 0.1 }
    }

    pub fn forward<E: Real>(&self, tape: &mut Tape<E>, x: Var, train: bool) -> Var {
        if train {
            let eps = E::from_f64(self.eps);
            let (y, mean, var) = tape.batch_norm(x, self.gamma, self.beta, eps);
            // running stats use the unbiased variance, PyTorch-style
            let shape = tape.shape(x);
            let n = (shape[0] * shape[2] * shape[3]) as f64;
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let mom = E::from_f64(self.momentum);
            let keep = E::one() - mom;
            let rm: Vec<E> = tape
                .value(self.running_mean)
                .iter()
                .zip(&mean)
                .map(|(&r, &m)| keep * r + mom * m)
                .collect();
            let rv: Vec<E> = tape
                .value(self.running_var)
                .iter()
                .zip(&var)
                .map(|(&r, &v)| keep * r + mom * v * E::from_f64(unbias))
                .collect();
            tape.set_value(self.running_mean, &rm);
            tape.set_value(self.running_var, &rv);
            y
        } else {
            let eps = self.eps;
            let gamma = tape.value(self.gamma).to_vec();
            let beta = tape.value(self.beta).to_vec();
            let rm = tape.value(self.running_mean).to_vec();
            let rv = tape.value(self.running_var).to_vec();
            let scale: Vec<E> = gamma
                .iter()
                .zip(&rv)
                .map(|(&g, &v)| g / (v + E::from_f64(eps)).sqrt())
                .collect();
            let shift: Vec<E> = beta
                .iter()
                .zip(rm.iter().zip(&scale))
                .map(|(&b, (&m, &s))| b - m * s)
                .collect();
            tape.channel_affine(x, scale, shift)
        }
    }
}

/// Single-slope PReLU, initialized at 0.25.
pub struct PRelu {
    pub slope: Var,
}

impl PRelu {
    pub fn new<E: Real>(
        tape: &mut Tape<E>,
        reg: &mut ParamRegistry,
        name: &str,
        trainable: bool,
    ) -> Self {
        let slope = tape.leaf(&[1], vec![E::from_f64(0.25)], trainable);
        reg.register(format!("{name}.slope"), slope, trainable);
        PRelu { slope }
    }

    pub fn forward<E: Real>(&self, tape: &mut Tape<E>, x: Var) -> Var {
        tape.prelu(x, self.slope)
    }
}

/// conv -> BN -> PReLU -> conv -> BN with an identity skip. Channel count is
/// preserved.
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub act: PRelu,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
}

impl ResidualBlock {
    pub fn new<E: Real>(
        tape: &mut Tape<E>,
        reg: &mut ParamRegistry,
        name: &str,
        rng: &mut ChaCha8Rng,
        channels: usize,
        trainable: bool,
    ) -> Self {
        ResidualBlock {
            conv1: Conv2d::new(tape, reg, &format!("{name}.conv1"), rng, channels, channels, 3, 1, 1, trainable),
            bn1: BatchNorm2d::new(tape, reg, &format!("{name}.bn1"), channels, trainable),
            act: PRelu::new(tape, reg, &format!("{name}.act"), trainable),
            conv2: Conv2d::new(tape, reg, &format!("{name}.conv2"), rng, channels, channels, 3, 1, 1, trainable),
            bn2: BatchNorm2d::new(tape, reg, &format!("{name}.bn2"), channels, trainable),
        }
    }

    pub fn forward<E: Real>(&self, tape: &mut Tape<E>, x: Var, train: bool) -> Var {
        let h = self.conv1.forward(tape, x);
        let h = self.bn1.forward(tape, h, train);
        let h = self.act.forward(tape, h);
        let h = self.conv2.forward(tape, h);
        let h = self.bn2.forward(tape, h, train);
        tape.add(x, h)
    }
}

pub struct MultiHeadAttention {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<E: Real>(
        tape: &mut Tape<E>,
        reg: &mut ParamRegistry,
        name: &str,
        rng: &mut ChaCha8Rng,
        heads: usize,
        dim: usize,
        trainable: bool,
    ) -> Self {
        assert!(dim % heads == 0, "embed dim {dim} not divisible by heads {heads}");
        let mut mk = |tape: &mut Tape<E>, reg: &mut ParamRegistry, suffix: &str| {
            let w = tape.leaf(&[dim, dim], uniform_init(rng, dim * dim, dim), trainable);
            reg.register(format!("{name}.{suffix}"), w, trainable);
            w
        };
        let wq = mk(tape, reg, "wq");
        let wk = mk(tape, reg, "wk");
        let wv = mk(tape, reg, "wv");
        let wo = mk(tape, reg, "wo");
        MultiHeadAttention { wq, wk, wv, wo, heads, dim }
    }

    /// x: [b, n, dim] -> [b, n, dim]. Returns the output and the attention
    /// weights [b*heads, n, n] (handy for invariant checks).
    pub fn forward_with_weights<E: Real>(&self, tape: &mut Tape<E>, x: Var) -> (Var, Var) {
        let shape = tape.shape(x).to_vec();
        assert_eq!(shape.len(), 3);
        let (b, n, d) = (shape[0], shape[1], shape[2]);
        assert_eq!(d, self.dim);
        let h = self.heads;
        let dh = d / h;
        let flat = tape.reshape(x, &[b * n, d]);
        let split = |tape: &mut Tape<E>, w: Var| {
            let p = tape.matmul(flat, w);
            let p = tape.reshape(p, &[b, n, h, dh]);
            let p = tape.permute(p, &[0, 2, 1, 3]);
            tape.reshape(p, &[b * h, n, dh])
        };
        let q = split(tape, self.wq);
        let k = split(tape, self.wk);
        let v = split(tape, self.wv);
        let scores = tape.matmul_t(q, k, false, true);
        let scaled = tape.scale(scores, E::from_f64(1.0 / (dh as f64).sqrt()));
        let attn = tape.softmax(scaled);
        let ctx = tape.matmul(attn, v);
        let ctx = tape.reshape(ctx, &[b, h, n, dh]);
        let ctx = tape.permute(ctx, &[0, 2, 1, 3]);
        let ctx = tape.reshape(ctx, &[b * n, d]);
        let out = tape.matmul(ctx, self.wo);
        (tape.reshape(out, &[b, n, d]), attn)
    }

    pub fn forward<E: Real>(&self, tape: &mut Tape<E>, x: Var) -> Var {
        self.forward_with_weights(tape, x).0
    }
}

// ---- optimizer ------------------------------------------------------------

/// Adam with bias correction. Defaults follow the training setup:
/// lr 2e-4, beta1 0.5, beta2 0.999.
pub struct Adam<E: Real> {
    pub lr: E,
    pub beta1: E,
    pub beta2: E,
    pub eps: E,
    step: u64,
    vars: Vec<Var>,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
}

impl<E: Real> Adam<E> {
    pub fn new(tape: &Tape<E>, vars: Vec<Var>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let m = vars.iter().map(|&v| vec![E::zero(); tape.value(v).len()]).collect();
        let v2 = vars.iter().map(|&v| vec![E::zero(); tape.value(v).len()]).collect();
        Adam {
            lr: E::from_f64(lr),
            beta1: E::from_f64(beta1),
            beta2: E::from_f64(beta2),
            eps: E::from_f64(1e-8),
            step: 0,
            vars,
            m,
            v: v2,
        }
    }

    pub fn with_defaults(tape: &Tape<E>, vars: Vec<Var>) -> Self {
        Self::new(tape, vars, 2e-4, 0.5, 0.999)
    }

    pub fn step(&mut self, tape: &mut Tape<E>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = E::one() - self.beta1.powi(t);
        let bc2 = E::one() - self.beta2.powi(t);
        for (i, &var) in self.vars.iter().enumerate() {
            let Some(grad) = tape.grad(var) else { continue };
            assert_eq!(grad.len(), self.m[i].len(), "grad/param shape mismatch");
            let grad = grad.to_vec();
            let mut value = tape.value(var).to_vec();
            for j in 0..grad.len() {
                let g = grad[j];
                self.m[i][j] = self.beta1 * self.m[i][j] + (E::one() - self.beta1) * g;
                self.v[i][j] = self.beta2 * self.v[i][j] + (E::one() - self.beta2) * g * g;
                let mhat = self.m[i][j] / bc1;
                let vhat = self.v[i][j] / bc2;
                value[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            tape.set_value(var, &value);
        }
    }
}

// ---- checkpoints ----------------------------------------------------------

const MAGIC: &[u8; 4] = b"MSNN";
const VERSION: u8 = 0x01;

/// Write every registry entry (trainable or not) as
/// (u32 name length, name bytes, u32 rank, u32 dims, f32 values), all LE,
/// after the "MSNN" magic and a format-version byte.
pub fn save_checkpoint<E: Real>(
    tape: &Tape<E>,
    reg: &ParamRegistry,
    path: impl AsRef<Path>,
) -> Result<(), NnError> {
    let path = path.as_ref();
    let io = |source| NnError::Io { path: path.display().to_string(), source };
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    for (name, var, _) in reg.entries() {
        let bytes = name.as_bytes();
        buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(bytes);
        let shape = tape.shape(*var);
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tape.value(*var) {
            buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&buf).map_err(io)
}

/// Load a checkpoint into an existing registry; names, order and shapes must
/// match the live model exactly.
pub fn load_checkpoint<E: Real>(
    tape: &mut Tape<E>,
    reg: &ParamRegistry,
    path: impl AsRef<Path>,
) -> Result<(), NnError> {
    let path = path.as_ref();
    let io = |source| NnError::Io { path: path.display().to_string(), source };
    let mut buf = Vec::new();
    std::fs::File::open(path).map_err(io)?.read_to_end(&mut buf).map_err(io)?;
    if buf.len() < 5 || &buf[0..4] != MAGIC {
        return Err(NnError::BadMagic);
    }
    if buf[4] != VERSION {
        return Err(NnError::BadVersion(buf[4]));
    }
    let mut off = 5usize;
    let take = |off: &mut usize, n: usize| -> Result<std::ops::Range<usize>, NnError> {
        if *off + n > buf.len() {
            return Err(NnError::TensorMismatch("truncated checkpoint".into()));
        }
        let r = *off..*off + n;
        *off += n;
        Ok(r)
    };
    for (name, var, _) in reg.entries() {
        let r = take(&mut off, 4)?;
        let nlen = u32::from_le_bytes(buf[r].try_into().unwrap()) as usize;
        let r = take(&mut off, nlen)?;
        let got = std::str::from_utf8(&buf[r])
            .map_err(|_| NnError::TensorMismatch("non-utf8 tensor name".into()))?
            .to_string();
        if got != *name {
            return Err(NnError::TensorMismatch(format!("expected {name}, found {got}")));
        }
        let r = take(&mut off, 4)?;
        let rank = u32::from_le_bytes(buf[r].try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let r = take(&mut off, 4)?;
            shape.push(u32::from_le_bytes(buf[r].try_into().unwrap()) as usize);
        }
        if shape != tape.shape(*var) {
            return Err(NnError::TensorMismatch(format!(
                "{name}: shape {:?} in file, {:?} in model",
                shape,
                tape.shape(*var)
            )));
        }
        let n = numel(&shape);
        let r = take(&mut off, 4 * n)?;
        let vals: Vec<E> = buf[r]
            .chunks_exact(4)
            .map(|c| E::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        tape.set_value(*var, &vals);
    }
    if off != buf.len() {
        return Err(NnError::TensorMismatch("trailing bytes in checkpoint".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use rand::SeedableRng;

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(&[2], vec![1.0, 2.0], true);
        let mut opt = Adam::with_defaults(&tape, vec![p]);
        opt.step(&mut tape); // no grads accumulated
        assert_eq!(tape.value(p), &[1.0, 2.0]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(&[2], vec![0.0, 0.0], true);
        tape.mark();
        let c = tape.constant(&[2], vec![3.0, -0.5]);
        let y = tape.mul(p, c);
        let loss = tape.sum_all(y); // grad = [3, -0.5]
        tape.backward(loss);
        let mut opt = Adam::with_defaults(&tape, vec![p]);
        opt.step(&mut tape);
        let v = tape.value(p);
        assert!((v[0] + 2e-4).abs() < 1e-7, "{v:?}");
        assert!((v[1] - 2e-4).abs() < 1e-7, "{v:?}");
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(&[1], vec![0.0], true);
        tape.mark();
        let mut opt = Adam::new(&tape, vec![p], 0.1, 0.5, 0.999);
        for _ in 0..100 {
            tape.reset();
            let c = tape.constant(&[1], vec![3.0]);
            let d = tape.sub(p, c);
            let sq = tape.mul(d, d);
            let loss = tape.sum_all(sq);
            tape.backward(loss);
            opt.step(&mut tape);
        }
        assert!((tape.value(p)[0] - 3.0).abs() < 0.1);
    }

    #[test]
    fn adam_lr_zero_is_noop() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(&[1], vec![5.0], true);
        tape.mark();
        let mut opt = Adam::new(&tape, vec![p], 0.0, 0.5, 0.999);
        let sq = tape.mul(p, p);
        let loss = tape.sum_all(sq);
        tape.backward(loss);
        opt.step(&mut tape);
        assert_eq!(tape.value(p)[0], 5.0);
    }

    #[test]
    fn residual_block_zero_weights_is_identity() {
        let mut tape = Tape::<f64>::new();
        let mut reg = ParamRegistry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = ResidualBlock::new(&mut tape, &mut reg, "rb", &mut rng, 4, true);
        // zero both conv weights/biases and the BN affine
        for var in [block.conv1.w, block.conv1.b, block.conv2.w, block.conv2.b, block.bn2.gamma] {
            let z = vec![0.0; tape.value(var).len()];
            tape.set_value(var, &z);
        }
        tape.mark();
        let xdata: Vec<f64> = (0..2 * 4 * 3 * 3).map(|i| (i as f64) * 0.01 - 0.3).collect();
        let x = tape.leaf(&[2, 4, 3, 3], xdata.clone(), false);
        let y = block.forward(&mut tape, x, true);
        for (a, b) in tape.value(y).iter().zip(&xdata) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(tape.shape(y), &[2, 4, 3, 3]);
    }

    #[test]
    fn residual_block_gradient_includes_skip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xdata: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = gradcheck::check(&[(vec![1, 1, 4, 4], xdata)], 1e-4, |t, vars| {
            let mut reg = ParamRegistry::new();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let block = ResidualBlock::new(t, &mut reg, "rb", &mut rng, 1, false);
            let y = block.forward(t, vars[0], true);
            t.mean_all(y)
        });
        assert!(report.max_rel_err < 1e-3, "{report:?}");
    }

    #[test]
    fn attention_single_token_weight_is_one() {
        let mut tape = Tape::<f64>::new();
        let mut reg = ParamRegistry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mha = MultiHeadAttention::new(&mut tape, &mut reg, "mha", &mut rng, 2, 4, false);
        let x = tape.leaf(&[1, 1, 4], vec![0.5, -1.0, 2.0, 0.1], false);
        let (y, attn) = mha.forward_with_weights(&mut tape, x);
        assert_eq!(tape.value(attn), &[1.0, 1.0]); // one weight per head
        // output must equal (x Wv) Wo since attention is the identity
        let xv = tape.leaf(&[1, 4], vec![0.5, -1.0, 2.0, 0.1], false);
        let v = tape.matmul(xv, mha.wv);
        let o = tape.matmul(v, mha.wo);
        for (a, b) in tape.value(y).iter().zip(tape.value(o)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut tape = Tape::<f64>::new();
        let mut reg = ParamRegistry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mha = MultiHeadAttention::new(&mut tape, &mut reg, "mha", &mut rng, 4, 8, false);
        let n = 2 * 5 * 8;
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = tape.leaf(&[2, 5, 8], data, false);
        let (_, attn) = mha.forward_with_weights(&mut tape, x);
        for row in tape.value(attn).chunks(5) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_two_token_hand_computation() {
        // 1 head, dim 2, hand-set weights, 2 tokens.
        let mut tape = Tape::<f64>::new();
        let mut reg = ParamRegistry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mha = MultiHeadAttention::new(&mut tape, &mut reg, "mha", &mut rng, 1, 2, false);
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        for w in [mha.wq, mha.wk, mha.wv, mha.wo] {
            tape.set_value(w, &eye);
        }
        let x = tape.leaf(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0], false);
        let y = mha.forward(&mut tape, x);
        // scores = x x^T / sqrt(2) = [[s,0],[0,s]], s = 1/sqrt(2)
        let s = 1.0 / 2.0f64.sqrt();
        let p = s.exp() / (s.exp() + 1.0); // softmax([s, 0])[0]
        let expect = [p, 1.0 - p, 1.0 - p, p];
        for (a, b) in tape.value(y).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{:?}", tape.value(y));
        }
    }

    #[test]
    fn attention_grads_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<f64> = (0..2 * 3 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = gradcheck::check(&[(vec![2, 3, 4], data)], 1e-4, |t, vars| {
            let mut reg = ParamRegistry::new();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let mha = MultiHeadAttention::new(t, &mut reg, "mha", &mut rng, 2, 4, false);
            let y = mha.forward(t, vars[0]);
            let z = t.mul(y, y);
            t.mean_all(z)
        });
        assert!(report.max_rel_err < 1e-3, "{report:?}");
    }

    #[test]
    fn batchnorm_eval_is_pure_function() {
        let mut tape = Tape::<f64>::new();
        let mut reg = ParamRegistry::new();
        let bn = BatchNorm2d::new(&mut tape, &mut reg, "bn", 2, true);
        tape.set_value(bn.running_mean, &[0.3, -0.2]);
        tape.set_value(bn.running_var, &[1.5, 0.7]);
        tape.mark();
        let data: Vec<f64> = (0..2 * 2 * 2 * 2).map(|i| i as f64 * 0.1).collect();
        let x = tape.leaf(&[2, 2, 2, 2], data.clone(), false);
        let y1 = bn.forward(&mut tape, x, false);
        let v1 = tape.value(y1).to_vec();
        tape.reset();
        let x = tape.leaf(&[2, 2, 2, 2], data, false);
        let y2 = bn.forward(&mut tape, x, false);
        assert_eq!(v1, tape.value(y2));
    }

    #[test]
    fn checkpoint_roundtrip_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.msnn");
        let build = |tape: &mut Tape<f64>, reg: &mut ParamRegistry, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lin = Linear::new(tape, reg, "lin", &mut rng, 3, 2, true);
            let bn = BatchNorm2d::new(tape, reg, "bn", 2, true);
            (lin, bn)
        };
        let mut tape = Tape::<f64>::new();
        let mut reg = ParamRegistry::new();
        build(&mut tape, &mut reg, 11);
        save_checkpoint(&tape, &reg, &path).unwrap();

        let mut tape2 = Tape::<f64>::new();
        let mut reg2 = ParamRegistry::new();
        build(&mut tape2, &mut reg2, 99);
        load_checkpoint(&mut tape2, &reg2, &path).unwrap();
        for ((_, a, _), (_, b, _)) in reg.entries().iter().zip(reg2.entries()) {
            let va: Vec<f32> = tape.value(*a).iter().map(|&v| v as f32).collect();
            let vb: Vec<f32> = tape2.value(*b).iter().map(|&v| v as f32).collect();
            assert_eq!(va, vb);
        }

        // corrupt the version byte
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 0x02;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&mut tape2, &reg2, &path),
            Err(NnError::BadVersion(0x02))
        ));
    }
}
