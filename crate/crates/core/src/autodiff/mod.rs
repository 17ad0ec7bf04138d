//! Dense tensors with a reverse-mode gradient tape.
//!
//! All trainable models in the crate are built from the ops here. A `Tape`
//! owns every tensor of a run; parameters are leaves registered before
//! [`Tape::mark`], and [`Tape::reset`] drops the per-step graph while keeping
//! the parameters in place. Gradients accumulate additively until
//! [`Tape::zero_grad`]. Tensors already recorded are never mutated in place
//! (parameter updates go through [`Tape::set_value`], which is only legal for
//! leaves).

pub mod conv;
pub mod real;

pub use conv::ConvSpec;
pub use real::Real;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op<E: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, E),
    AddScalar(Var, E),
    Tanh(Var),
    Exp(Var),
    Sqrt(Var),
    Abs(Var),
    LeakyRelu(Var, E),
    PRelu { x: Var, slope: Var },
    Clamp { x: Var, lo: E, hi: E },
    Matmul { a: Var, b: Var, trans_a: bool, trans_b: bool },
    Permute { x: Var, axes: Vec<usize> },
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize, len: usize },
    SumAll(Var),
    SumAxis { x: Var, axis: usize },
    Softmax(Var),
    ScaleRows { x: Var, s: Var },
    ScaleCols { x: Var, s: Var },
    AddBatchBias { x: Var, b: Var },
    AddChannelBias { x: Var, b: Var },
    ChannelAffine { x: Var, scale: Vec<E> },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<E>, var: Vec<E>, eps: E },
    Conv2d { x: Var, w: Var, spec: ConvSpec },
    Conv2dBackInput { g: Var, w: Var, spec: ConvSpec, in_h: usize, in_w: usize },
    PixelShuffle { x: Var, r: usize },
    MirrorQuad(Var),
    RoundTernarySt(Var),
}

struct Node<E: Real> {
    value: Vec<E>,
    shape: Vec<usize>,
    op: Op<E>,
    /// True when some leaf with `requires_grad` feeds this node.
    tracked: bool,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub struct Tape<E: Real> {
    nodes: Vec<Node<E>>,
    grads: Vec<Vec<E>>,
    mark: usize,
}

impl<E: Real> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Real> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), mark: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a leaf tensor. Panics if data length and shape disagree.
    pub fn leaf(&mut self, shape: &[usize], data: Vec<E>, requires_grad: bool) -> Var {
        assert_eq!(numel(shape), data.len(), "leaf data/shape mismatch");
        self.push(shape.to_vec(), data, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<E>) -> Var {
        self.leaf(shape, data, false)
    }

    pub fn scalar(&mut self, v: E) -> Var {
        self.constant(&[1], vec![v])
    }

    /// Everything recorded so far survives [`Tape::reset`].
    pub fn mark(&mut self) {
        self.mark = self.nodes.len();
    }

    /// Drop all nodes after the mark and zero the surviving gradients.
    pub fn reset(&mut self) {
        self.nodes.truncate(self.mark);
        self.grads.truncate(self.mark);
        for g in &mut self.grads {
            g.clear();
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.clear();
        }
    }

    pub fn value(&self, v: Var) -> &[E] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Gradient buffer, if any was accumulated.
    pub fn grad(&self, v: Var) -> Option<&[E]> {
        let g = &self.grads[v.0];
        if g.is_empty() {
            None
        } else {
            Some(g)
        }
    }

    /// Overwrite a leaf's value (parameter updates). Not legal for op outputs.
    pub fn set_value(&mut self, v: Var, data: &[E]) {
        assert!(matches!(self.nodes[v.0].op, Op::Leaf), "set_value on non-leaf");
        assert_eq!(self.nodes[v.0].value.len(), data.len());
        self.nodes[v.0].value.copy_from_slice(data);
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<E>, op: Op<E>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let tracked = requires_grad
            || match &op {
                Op::Leaf => false,
                _ => self.parents(&op).iter().any(|p| self.nodes[p.0].tracked),
            };
        self.nodes.push(Node { value, shape, op, tracked });
        self.grads.push(Vec::new());
        Var(self.nodes.len() - 1)
    }

    fn parents(&self, op: &Op<E>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::Neg(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x, _)
            | Op::Tanh(x)
            | Op::Exp(x)
            | Op::Sqrt(x)
            | Op::Abs(x)
            | Op::LeakyRelu(x, _)
            | Op::Clamp { x, .. }
            | Op::Permute { x, .. }
            | Op::Reshape(x)
            | Op::Slice { x, .. }
            | Op::SumAll(x)
            | Op::SumAxis { x, .. }
            | Op::Softmax(x)
            | Op::ChannelAffine { x, .. }
            | Op::PixelShuffle { x, .. }
            | Op::MirrorQuad(x)
            | Op::RoundTernarySt(x) => vec![*x],
            Op::PRelu { x, slope } => vec![*x, *slope],
            Op::Matmul { a, b, .. } => vec![*a, *b],
            Op::Concat { parts, .. } => parts.clone(),
            Op::ScaleRows { x, s } | Op::ScaleCols { x, s } => vec![*x, *s],
            Op::AddBatchBias { x, b } | Op::AddChannelBias { x, b } => vec![*x, *b],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Conv2d { x, w, .. } => vec![*x, *w],
            Op::Conv2dBackInput { g, w, .. } => vec![*g, *w],
        }
    }

    // ---- elementwise -----------------------------------------------------

    fn binary_shape(&self, a: Var, b: Var, what: &str) -> Result<Vec<usize>, AdError> {
        if self.shape(a) != self.shape(b) {
            return Err(AdError::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(self.shape(a).to_vec())
    }

    pub fn try_add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let shape = self.binary_shape(a, b, "add")?;
        let v: Vec<E> =
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        Ok(self.push(shape, v, Op::Add(a, b), false))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.try_add(a, b).unwrap()
    }

    pub fn try_sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let shape = self.binary_shape(a, b, "sub")?;
        let v: Vec<E> =
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        Ok(self.push(shape, v, Op::Sub(a, b), false))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.try_sub(a, b).unwrap()
    }

    pub fn try_mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let shape = self.binary_shape(a, b, "mul")?;
        let v: Vec<E> =
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        Ok(self.push(shape, v, Op::Mul(a, b), false))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.try_mul(a, b).unwrap()
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let shape = self.binary_shape(a, b, "div").unwrap();
        let v: Vec<E> =
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x / y).collect();
        self.push(shape, v, Op::Div(a, b), false)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let v: Vec<E> = self.value(x).iter().map(|&a| -a).collect();
        self.push(shape, v, Op::Neg(x), false)
    }

    pub fn scale(&mut self, x: Var, c: E) -> Var {
        let shape = self.shape(x).to_vec();
        let v: Vec<E> = self.value(x).iter().map(|&a| a * c).collect();
        self.push(shape, v, Op::Scale(x, c), false)
    }

    pub fn add_scalar(&mut self, x: Var, c: E) -> Var {
        let shape = self.shape(x).to_vec();
        let v: Vec<E> = self.value(x).iter().map(|&a| a + c).collect();
        self.push(shape, v, Op::AddScalar(x, c), false)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let v: Vec<E> = self.value(x).iter().map(|&a| a.tanh()).collect();
        self.push(shape, v, Op::Tanh(x), false)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let v: Vec<E> = self.value(x).iter().map(|&a| a.exp()).collect();
        self.push(shape, v, Op::Exp(x), false)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let v: Vec<E> = self.value(x).iter().map(|&a| a.sqrt()).collect();
        self.push(shape, v, Op::Sqrt(x), false)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let v: Vec<E> = self.value(x).iter().map(|&a| a.abs()).collect();
        self.push(shape, v, Op::Abs(x), false)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: E) -> Var {
        let shape = self.shape(x).to_vec();
        let v: Vec<E> = self
            .value(x)
            .iter()
            .map(|&a| if a >= E::zero() { a } else { a * slope })
            .collect();
        self.push(shape, v, Op::LeakyRelu(x, slope), false)
    }

    /// PReLU with a single learnable slope tensor of shape [1].
    pub fn prelu(&mut self, x: Var, slope: Var) -> Var {
        assert_eq!(self.value(slope).len(), 1, "prelu slope must be scalar");
        let a = self.value(slope)[0];
        let shape = self.shape(x).to_vec();
        let v: Vec<E> = self
            .value(x)
            .iter()
            .map(|&t| if t >= E::zero() { t } else { t * a })
            .collect();
        self.push(shape, v, Op::PRelu { x, slope }, false)
    }

    pub fn clamp(&mut self, x: Var, lo: E, hi: E) -> Var {
        let shape = self.shape(x).to_vec();
        let v: Vec<E> = self
            .value(x)
            .iter()
            .map(|&a| if a < lo { lo } else if a > hi { hi } else { a })
            .collect();
        self.push(shape, v, Op::Clamp { x, lo, hi }, false)
    }

    // ---- shape ops -------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        assert_eq!(numel(shape), self.value(x).len(), "reshape numel mismatch");
        let v = self.value(x).to_vec();
        self.push(shape.to_vec(), v, Op::Reshape(x), false)
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Var {
        let in_shape = self.shape(x).to_vec();
        assert_eq!(axes.len(), in_shape.len());
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let v = permute_copy(self.value(x), &in_shape, axes);
        self.push(out_shape, v, Op::Permute { x, axes: axes.to_vec() }, false)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let base = self.shape(parts[0]).to_vec();
        let mut cat = 0usize;
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(s.len(), base.len(), "concat rank mismatch");
            for (d, (&a, &b)) in s.iter().zip(&base).enumerate() {
                if d != axis {
                    assert_eq!(a, b, "concat non-axis dim mismatch");
                }
            }
            cat += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = cat;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut v = vec![E::zero(); numel(&out_shape)];
        let row = cat * inner;
        let mut off = 0usize;
        for &p in parts {
            let pa = self.shape(p)[axis];
            let val = self.value(p);
            for o in 0..outer {
                let src = &val[o * pa * inner..(o + 1) * pa * inner];
                v[o * row + off..o * row + off + pa * inner].copy_from_slice(src);
            }
            off += pa * inner;
        }
        self.push(out_shape, v, Op::Concat { parts: parts.to_vec(), axis }, false)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let in_shape = self.shape(x).to_vec();
        assert!(start + len <= in_shape[axis], "slice out of range");
        let mut out_shape = in_shape.clone();
        out_shape[axis] = len;
        let outer: usize = in_shape[..axis].iter().product();
        let inner: usize = in_shape[axis + 1..].iter().product();
        let mut v = vec![E::zero(); numel(&out_shape)];
        let val = self.value(x);
        for o in 0..outer {
            let src = &val[(o * in_shape[axis] + start) * inner..(o * in_shape[axis] + start + len) * inner];
            v[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
        }
        self.push(out_shape, v, Op::Slice { x, axis, start, len }, false)
    }

    // ---- reductions ------------------------------------------------------

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: E = self.value(x).iter().copied().sum();
        self.push(vec![1], vec![s], Op::SumAll(x), false)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum_all(x);
        self.scale(s, E::from_f64(1.0 / n as f64))
    }

    /// Sum over one axis of a 2D tensor.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), 2, "sum_axis expects rank 2");
        let (r, c) = (shape[0], shape[1]);
        let val = self.value(x);
        let (out_shape, v) = if axis == 1 {
            let mut v = vec![E::zero(); r];
            for i in 0..r {
                v[i] = val[i * c..(i + 1) * c].iter().copied().sum();
            }
            (vec![r], v)
        } else {
            let mut v = vec![E::zero(); c];
            for i in 0..r {
                for j in 0..c {
                    v[j] += val[i * c + j];
                }
            }
            (vec![c], v)
        };
        self.push(out_shape, v, Op::SumAxis { x, axis }, false)
    }

    /// Softmax over the last axis, any rank.
    pub fn softmax(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("softmax needs rank >= 1");
        let mut v = self.value(x).to_vec();
        for row in v.chunks_mut(n) {
            let mx = row.iter().copied().fold(E::neg_infinity(), E::max);
            let mut z = E::zero();
            for e in row.iter_mut() {
                *e = (*e - mx).exp();
                z += *e;
            }
            for e in row.iter_mut() {
                *e /= z;
            }
        }
        self.push(shape, v, Op::Softmax(x), false)
    }

    // ---- broadcast helpers ----------------------------------------------

    /// Multiply row i of a [n, m] matrix by s[i].
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), 2);
        assert_eq!(self.shape(s), &[shape[0]]);
        let (n, m) = (shape[0], shape[1]);
        let sv = self.value(s).to_vec();
        let mut v = self.value(x).to_vec();
        for i in 0..n {
            for e in &mut v[i * m..(i + 1) * m] {
                *e *= sv[i];
            }
        }
        self.push(shape, v, Op::ScaleRows { x, s }, false)
    }

    /// Multiply column j of a [n, m] matrix by s[j].
    pub fn scale_cols(&mut self, x: Var, s: Var) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), 2);
        assert_eq!(self.shape(s), &[shape[1]]);
        let (n, m) = (shape[0], shape[1]);
        let sv = self.value(s).to_vec();
        let mut v = self.value(x).to_vec();
        for i in 0..n {
            for j in 0..m {
                v[i * m + j] *= sv[j];
            }
        }
        self.push(shape, v, Op::ScaleCols { x, s }, false)
    }

    /// Add a tensor of shape x.shape[1..] to every batch slice of x.
    pub fn add_batch_bias(&mut self, x: Var, b: Var) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(&shape[1..], self.shape(b), "batch bias shape mismatch");
        let bv = self.value(b).to_vec();
        let mut v = self.value(x).to_vec();
        for chunk in v.chunks_mut(bv.len()) {
            for (e, &a) in chunk.iter_mut().zip(&bv) {
                *e += a;
            }
        }
        self.push(shape, v, Op::AddBatchBias { x, b }, false)
    }

    /// Add b[c] to every spatial position of channel c in a [b, c, h, w] tensor.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), 4);
        assert_eq!(self.shape(b), &[shape[1]], "channel bias shape mismatch");
        let bv = self.value(b).to_vec();
        let hw = shape[2] * shape[3];
        let mut v = self.value(x).to_vec();
        for (ci, chunk) in v.chunks_mut(hw).enumerate() {
            let a = bv[ci % shape[1]];
            for e in chunk.iter_mut() {
                *e += a;
            }
        }
        self.push(shape, v, Op::AddChannelBias { x, b }, false)
    }

    /// Per-channel affine with constant scale/shift (eval-mode batch norm).
    pub fn channel_affine(&mut self, x: Var, scale: Vec<E>, shift: Vec<E>) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), 4);
        assert_eq!(scale.len(), shape[1]);
        assert_eq!(shift.len(), shape[1]);
        let hw = shape[2] * shape[3];
        let mut v = self.value(x).to_vec();
        for (ci, chunk) in v.chunks_mut(hw).enumerate() {
            let c = ci % shape[1];
            for e in chunk.iter_mut() {
                *e = *e * scale[c] + shift[c];
            }
        }
        self.push(shape, v, Op::ChannelAffine { x, scale }, false)
    }

    /// Training-mode batch norm over [b, c, h, w]; returns the output plus the
    /// batch statistics so the layer can maintain running estimates.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: E) -> (Var, Vec<E>, Vec<E>) {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), 4);
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        assert_eq!(self.shape(gamma), &[c]);
        assert_eq!(self.shape(beta), &[c]);
        let hw = h * w;
        let n = b * hw;
        let val = self.value(x);
        let mut mean = vec![E::zero(); c];
        let mut var = vec![E::zero(); c];
        for bi in 0..b {
            for ci in 0..c {
                let s: E = val[(bi * c + ci) * hw..(bi * c + ci + 1) * hw].iter().copied().sum();
                mean[ci] += s;
            }
        }
        let inv_n = E::from_f64(1.0 / n as f64);
        for m in &mut mean {
            *m *= inv_n;
        }
        for bi in 0..b {
            for ci in 0..c {
                for &e in &val[(bi * c + ci) * hw..(bi * c + ci + 1) * hw] {
                    let d = e - mean[ci];
                    var[ci] += d * d;
                }
            }
        }
        for v in &mut var {
            *v *= inv_n;
        }
        let gv = self.value(gamma).to_vec();
        let bv = self.value(beta).to_vec();
        let mut out = vec![E::zero(); val.len()];
        for bi in 0..b {
            for ci in 0..c {
                let inv_std = (var[ci] + eps).sqrt().recip();
                let base = (bi * c + ci) * hw;
                for k in 0..hw {
                    out[base + k] = (self.value(x)[base + k] - mean[ci]) * inv_std * gv[ci] + bv[ci];
                }
            }
        }
        let node = self.push(
            shape,
            out,
            Op::BatchNorm { x, gamma, beta, mean: mean.clone(), var: var.clone(), eps },
            false,
        );
        (node, mean, var)
    }

    // ---- matmul ----------------------------------------------------------

    /// Rank-2 matmul or rank-3 batched matmul, with optional transposes of
    /// the trailing two axes.
    pub fn try_matmul(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var, AdError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != sb.len() || !(sa.len() == 2 || sa.len() == 3) {
            return Err(AdError::Dimension(format!("matmul ranks {:?} x {:?}", sa, sb)));
        }
        let batch = if sa.len() == 3 {
            if sa[0] != sb[0] {
                return Err(AdError::Dimension(format!("matmul batch {:?} x {:?}", sa, sb)));
            }
            sa[0]
        } else {
            1
        };
        let (ra, ca) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (rb, cb) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (m, ka) = if trans_a { (ca, ra) } else { (ra, ca) };
        let (kb, n) = if trans_b { (cb, rb) } else { (rb, cb) };
        if ka != kb {
            return Err(AdError::Dimension(format!(
                "matmul inner dims: {:?} (t={trans_a}) x {:?} (t={trans_b})",
                sa, sb
            )));
        }
        let mut v = vec![E::zero(); batch * m * n];
        let (la, lb, lc) = (ra * ca, rb * cb, m * n);
        for i in 0..batch {
            real::gemm_rm(
                m,
                ka,
                n,
                &self.value(a)[i * la..(i + 1) * la],
                trans_a,
                &self.value(b)[i * lb..(i + 1) * lb],
                trans_b,
                &mut v[i * lc..(i + 1) * lc],
                false,
            );
        }
        let out_shape = if sa.len() == 3 { vec![batch, m, n] } else { vec![m, n] };
        Ok(self.push(out_shape, v, Op::Matmul { a, b, trans_a, trans_b }, false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.try_matmul(a, b, false, false).unwrap()
    }

    pub fn matmul_t(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Var {
        self.try_matmul(a, b, trans_a, trans_b).unwrap()
    }

    // ---- structured ops --------------------------------------------------

    pub fn try_conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var, AdError> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 4 || sw.len() != 4 {
            return Err(AdError::Dimension("conv2d expects 4D input and weight".into()));
        }
        if sx[1] != sw[1] {
            return Err(AdError::Dimension(format!(
                "conv2d channels: input {} vs weight {}",
                sx[1], sw[1]
            )));
        }
        let spec = ConvSpec { in_c: sw[1], out_c: sw[0], kh: sw[2], kw: sw[3], stride, pad };
        let (oh, ow) = spec.out_hw(sx[2], sx[3]);
        let v = conv::conv_fwd(self.value(x), sx[0], sx[2], sx[3], self.value(w), &spec);
        Ok(self.push(vec![sx[0], spec.out_c, oh, ow], v, Op::Conv2d { x, w, spec }, false))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        self.try_conv2d(x, w, stride, pad).unwrap()
    }

    /// First-class "gradient of conv2d w.r.t. its input" op. Used to build
    /// input-gradient graphs that can themselves be differentiated.
    pub fn conv2d_back_input(
        &mut self,
        g: Var,
        w: Var,
        stride: usize,
        pad: usize,
        in_h: usize,
        in_w: usize,
    ) -> Var {
        let sg = self.shape(g).to_vec();
        let sw = self.shape(w).to_vec();
        assert_eq!(sg.len(), 4);
        assert_eq!(sg[1], sw[0], "grad channels must match conv out channels");
        let spec = ConvSpec { in_c: sw[1], out_c: sw[0], kh: sw[2], kw: sw[3], stride, pad };
        let (oh, ow) = spec.out_hw(in_h, in_w);
        assert_eq!((oh, ow), (sg[2], sg[3]), "grad spatial dims inconsistent");
        let v = conv::conv_bwd_input(self.value(g), sg[0], in_h, in_w, self.value(w), &spec);
        self.push(
            vec![sg[0], spec.in_c, in_h, in_w],
            v,
            Op::Conv2dBackInput { g, w, spec, in_h, in_w },
            false,
        )
    }

    pub fn try_pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var, AdError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[1] % (r * r) != 0 {
            return Err(AdError::Dimension(format!(
                "pixel_shuffle: shape {:?} not divisible by r^2={}",
                s,
                r * r
            )));
        }
        let (b, c_in, h, w) = (s[0], s[1], s[2], s[3]);
        let c = c_in / (r * r);
        let v = pixel_shuffle_copy(self.value(x), b, c, r, h, w, false);
        Ok(self.push(vec![b, c, h * r, w * r], v, Op::PixelShuffle { x, r }, false))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Var {
        self.try_pixel_shuffle(x, r).unwrap()
    }

    /// Mirror a [b, 1, n, n] quadrant into a [b, 1, 2n, 2n] pattern:
    /// top-left is the quadrant, the other three quadrants are reflections.
    pub fn mirror_quad(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4);
        assert_eq!(s[2], s[3], "mirror_quad needs square input");
        let (b, c, n) = (s[0], s[1], s[2]);
        assert_eq!(c, 1);
        let m = 2 * n;
        let val = self.value(x);
        let mut v = vec![E::zero(); b * m * m];
        for i in 0..b {
            let q = &val[i * n * n..(i + 1) * n * n];
            let out = &mut v[i * m * m..(i + 1) * m * m];
            for y in 0..n {
                for xcol in 0..n {
                    let e = q[y * n + xcol];
                    out[y * m + xcol] = e;
                    out[y * m + (m - 1 - xcol)] = e;
                    out[(m - 1 - y) * m + xcol] = e;
                    out[(m - 1 - y) * m + (m - 1 - xcol)] = e;
                }
            }
        }
        self.push(vec![b, 1, m, m], v, Op::MirrorQuad(x), false)
    }

    /// Quantize to {0, 0.5, 1} (ties round half-up); backward is identity.
    pub fn round_ternary_st(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let half = E::from_f64(0.5);
        let two = E::from_f64(2.0);
        let v: Vec<E> = self
            .value(x)
            .iter()
            .map(|&a| (two * a + half).floor() / two)
            .collect();
        self.push(shape, v, Op::RoundTernarySt(x), false)
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss. Gradients accumulate additively.
    pub fn try_backward(&mut self, loss: Var) -> Result<(), AdError> {
        if self.value(loss).len() != 1 {
            return Err(AdError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].tracked {
            return Ok(());
        }
        // Seed into a scratch set of grads so accumulation across backward
        // calls stays additive.
        let n = self.nodes.len();
        let mut gs: Vec<Vec<E>> = vec![Vec::new(); n];
        gs[loss.0] = vec![E::one()];
        for i in (0..=loss.0).rev() {
            if gs[i].is_empty() || !self.nodes[i].tracked {
                continue;
            }
            let g = std::mem::take(&mut gs[i]);
            self.backprop_node(i, &g, &mut gs);
            gs[i] = g;
        }
        for i in 0..n {
            if gs[i].is_empty() || !self.nodes[i].tracked {
                continue;
            }
            if self.grads[i].is_empty() {
                self.grads[i] = std::mem::take(&mut gs[i]);
            } else {
                for (a, b) in self.grads[i].iter_mut().zip(&gs[i]) {
                    *a += *b;
                }
            }
        }
        Ok(())
    }

    pub fn backward(&mut self, loss: Var) {
        self.try_backward(loss).unwrap()
    }

    fn backprop_node(&self, i: usize, g: &[E], gs: &mut [Vec<E>]) {
        let node = &self.nodes[i];
        let acc = |gs: &mut [Vec<E>], v: Var, contrib: &[E], tape: &Self| {
            if !tape.nodes[v.0].tracked {
                return;
            }
            if gs[v.0].is_empty() {
                gs[v.0] = contrib.to_vec();
            } else {
                for (a, &b) in gs[v.0].iter_mut().zip(contrib) {
                    *a += b;
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(gs, *a, g, self);
                acc(gs, *b, g, self);
            }
            Op::Sub(a, b) => {
                acc(gs, *a, g, self);
                let neg: Vec<E> = g.iter().map(|&x| -x).collect();
                acc(gs, *b, &neg, self);
            }
            Op::Mul(a, b) => {
                let ga: Vec<E> = g.iter().zip(self.value(*b)).map(|(&x, &y)| x * y).collect();
                let gb: Vec<E> = g.iter().zip(self.value(*a)).map(|(&x, &y)| x * y).collect();
                acc(gs, *a, &ga, self);
                acc(gs, *b, &gb, self);
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                let av = self.value(*a);
                let ga: Vec<E> = g.iter().zip(bv).map(|(&x, &y)| x / y).collect();
                let gb: Vec<E> = g
                    .iter()
                    .zip(av.iter().zip(bv))
                    .map(|(&x, (&a, &b))| -x * a / (b * b))
                    .collect();
                acc(gs, *a, &ga, self);
                acc(gs, *b, &gb, self);
            }
            Op::Neg(x) => {
                let gx: Vec<E> = g.iter().map(|&v| -v).collect();
                acc(gs, *x, &gx, self);
            }
            Op::Scale(x, c) => {
                let gx: Vec<E> = g.iter().map(|&v| v * *c).collect();
                acc(gs, *x, &gx, self);
            }
            Op::AddScalar(x, _) => acc(gs, *x, g, self),
            Op::Tanh(x) => {
                let y = &node.value;
                let gx: Vec<E> = g.iter().zip(y).map(|(&gv, &yv)| gv * (E::one() - yv * yv)).collect();
                acc(gs, *x, &gx, self);
            }
            Op::Exp(x) => {
                let gx: Vec<E> = g.iter().zip(&node.value).map(|(&gv, &yv)| gv * yv).collect();
                acc(gs, *x, &gx, self);
            }
            Op::Sqrt(x) => {
                let half = E::from_f64(0.5);
                let gx: Vec<E> = g
                    .iter()
                    .zip(&node.value)
                    .map(|(&gv, &yv)| gv * half / yv)
                    .collect();
                acc(gs, *x, &gx, self);
            }
            Op::Abs(x) => {
                let gx: Vec<E> = g
                    .iter()
                    .zip(self.value(*x))
                    .map(|(&gv, &xv)| {
                        if xv > E::zero() {
                            gv
                        } else if xv < E::zero() {
                            -gv
                        } else {
                            E::zero()
                        }
                    })
                    .collect();
                acc(gs, *x, &gx, self);
            }
            Op::LeakyRelu(x, slope) => {
                let gx: Vec<E> = g
                    .iter()
                    .zip(self.value(*x))
                    .map(|(&gv, &xv)| if xv >= E::zero() { gv } else { gv * *slope })
                    .collect();
                acc(gs, *x, &gx, self);
            }
            Op::PRelu { x, slope } => {
                let a = self.value(*slope)[0];
                let xv = self.value(*x);
                let gx: Vec<E> = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &t)| if t >= E::zero() { gv } else { gv * a })
                    .collect();
                let gslope: E = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &t)| if t >= E::zero() { E::zero() } else { gv * t })
                    .sum();
                acc(gs, *x, &gx, self);
                acc(gs, *slope, &[gslope], self);
            }
            Op::Clamp { x, lo, hi } => {
                let gx: Vec<E> = g
                    .iter()
                    .zip(self.value(*x))
                    .map(|(&gv, &xv)| if xv < *lo || xv > *hi { E::zero() } else { gv })
                    .collect();
                acc(gs, *x, &gx, self);
            }
            Op::Matmul { a, b, trans_a, trans_b } => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let batch = if sa.len() == 3 { sa[0] } else { 1 };
                let (ra, ca) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let (rb, cb) = (sb[sb.len() - 2], sb[sb.len() - 1]);
                let (m, k) = if *trans_a { (ca, ra) } else { (ra, ca) };
                let n = if *trans_b { rb } else { cb };
                let (la, lb, lc) = (ra * ca, rb * cb, m * n);
                let mut ga = vec![E::zero(); batch * la];
                let mut gb = vec![E::zero(); batch * lb];
                for i in 0..batch {
                    let gv = &g[i * lc..(i + 1) * lc];
                    let av = &self.value(*a)[i * la..(i + 1) * la];
                    let bv = &self.value(*b)[i * lb..(i + 1) * lb];
                    let gas = &mut ga[i * la..(i + 1) * la];
                    let gbs = &mut gb[i * lb..(i + 1) * lb];
                    match (*trans_a, *trans_b) {
                        (false, false) => {
                            real::gemm_rm(m, n, k, gv, false, bv, true, gas, false);
                            real::gemm_rm(k, m, n, av, true, gv, false, gbs, false);
                        }
                        (true, false) => {
                            // z = a^T b: ga = b g^T, gb = a g
                            real::gemm_rm(k, n, m, bv, false, gv, true, gas, false);
                            real::gemm_rm(k, m, n, av, false, gv, false, gbs, false);
                        }
                        (false, true) => {
                            // z = a b^T: ga = g b, gb = g^T a
                            real::gemm_rm(m, n, k, gv, false, bv, false, gas, false);
                            real::gemm_rm(n, m, k, gv, true, av, false, gbs, false);
                        }
                        (true, true) => {
                            // z = a^T b^T: ga = b^T g^T, gb = g^T a^T
                            real::gemm_rm(k, n, m, bv, true, gv, true, gas, false);
                            real::gemm_rm(n, m, k, gv, true, av, true, gbs, false);
                        }
                    }
                }
                acc(gs, *a, &ga, self);
                acc(gs, *b, &gb, self);
            }
            Op::Permute { x, axes } => {
                let mut inv = vec![0usize; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                let gx = permute_copy(g, &node.shape, &inv);
                acc(gs, *x, &gx, self);
            }
            Op::Reshape(x) => acc(gs, *x, g, self),
            Op::Concat { parts, axis } => {
                let out_shape = &node.shape;
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let row = out_shape[*axis] * inner;
                let mut off = 0usize;
                for &p in parts {
                    let pa = self.shape(p)[*axis];
                    let mut gp = vec![E::zero(); numel(self.shape(p))];
                    for o in 0..outer {
                        gp[o * pa * inner..(o + 1) * pa * inner]
                            .copy_from_slice(&g[o * row + off..o * row + off + pa * inner]);
                    }
                    acc(gs, p, &gp, self);
                    off += pa * inner;
                }
            }
            Op::Slice { x, axis, start, len } => {
                let in_shape = self.shape(*x);
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[*axis + 1..].iter().product();
                let mut gx = vec![E::zero(); numel(in_shape)];
                for o in 0..outer {
                    gx[(o * in_shape[*axis] + start) * inner
                        ..(o * in_shape[*axis] + start + len) * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                acc(gs, *x, &gx, self);
            }
            Op::SumAll(x) => {
                let gx = vec![g[0]; numel(self.shape(*x))];
                acc(gs, *x, &gx, self);
            }
            Op::SumAxis { x, axis } => {
                let in_shape = self.shape(*x);
                let (r, c) = (in_shape[0], in_shape[1]);
                let mut gx = vec![E::zero(); r * c];
                if *axis == 1 {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] = g[i];
                        }
                    }
                } else {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] = g[j];
                        }
                    }
                }
                acc(gs, *x, &gx, self);
            }
            Op::Softmax(x) => {
                let n = *node.shape.last().unwrap();
                let y = &node.value;
                let mut gx = vec![E::zero(); y.len()];
                for (row, (yr, gr)) in y.chunks(n).zip(g.chunks(n)).enumerate() {
                    let dot: E = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        gx[row * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(gs, *x, &gx, self);
            }
            Op::ScaleRows { x, s } => {
                let (n, m) = (node.shape[0], node.shape[1]);
                let sv = self.value(*s);
                let xv = self.value(*x);
                let mut gx = vec![E::zero(); n * m];
                let mut gsv = vec![E::zero(); n];
                for i in 0..n {
                    for j in 0..m {
                        gx[i * m + j] = g[i * m + j] * sv[i];
                        gsv[i] += g[i * m + j] * xv[i * m + j];
                    }
                }
                acc(gs, *x, &gx, self);
                acc(gs, *s, &gsv, self);
            }
            Op::ScaleCols { x, s } => {
                let (n, m) = (node.shape[0], node.shape[1]);
                let sv = self.value(*s);
                let xv = self.value(*x);
                let mut gx = vec![E::zero(); n * m];
                let mut gsv = vec![E::zero(); m];
                for i in 0..n {
                    for j in 0..m {
                        gx[i * m + j] = g[i * m + j] * sv[j];
                        gsv[j] += g[i * m + j] * xv[i * m + j];
                    }
                }
                acc(gs, *x, &gx, self);
                acc(gs, *s, &gsv, self);
            }
            Op::AddBatchBias { x, b } => {
                acc(gs, *x, g, self);
                let bn = numel(self.shape(*b));
                let mut gb = vec![E::zero(); bn];
                for chunk in g.chunks(bn) {
                    for (a, &v) in gb.iter_mut().zip(chunk) {
                        *a += v;
                    }
                }
                acc(gs, *b, &gb, self);
            }
            Op::AddChannelBias { x, b } => {
                acc(gs, *x, g, self);
                let c = node.shape[1];
                let hw = node.shape[2] * node.shape[3];
                let mut gb = vec![E::zero(); c];
                for (ci, chunk) in g.chunks(hw).enumerate() {
                    let s: E = chunk.iter().copied().sum();
                    gb[ci % c] += s;
                }
                acc(gs, *b, &gb, self);
            }
            Op::ChannelAffine { x, scale, .. } => {
                let c = node.shape[1];
                let hw = node.shape[2] * node.shape[3];
                let mut gx = vec![E::zero(); g.len()];
                for (ci, (gc, xc)) in g.chunks(hw).zip(gx.chunks_mut(hw)).enumerate() {
                    let s = scale[ci % c];
                    for (o, &v) in xc.iter_mut().zip(gc) {
                        *o = v * s;
                    }
                }
                acc(gs, *x, &gx, self);
            }
            Op::BatchNorm { x, gamma, beta, mean, var, eps } => {
                let (b, c, h, w) = (node.shape[0], node.shape[1], node.shape[2], node.shape[3]);
                let hw = h * w;
                let n = b * hw;
                let inv_n = E::from_f64(1.0 / n as f64);
                let xv = self.value(*x);
                let gv = self.value(*gamma);
                let mut ggamma = vec![E::zero(); c];
                let mut gbeta = vec![E::zero(); c];
                let mut sum_g = vec![E::zero(); c];
                let mut sum_gx = vec![E::zero(); c];
                // x_hat recomputed from saved statistics
                let xhat = |ci: usize, idx: usize| (xv[idx] - mean[ci]) * (var[ci] + *eps).sqrt().recip();
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * hw;
                        for k in 0..hw {
                            let gg = g[base + k];
                            let xh = xhat(ci, base + k);
                            ggamma[ci] += gg * xh;
                            gbeta[ci] += gg;
                            sum_g[ci] += gg;
                            sum_gx[ci] += gg * xh;
                        }
                    }
                }
                let mut gx = vec![E::zero(); xv.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        let inv_std = (var[ci] + *eps).sqrt().recip();
                        let coef = gv[ci] * inv_std;
                        let base = (bi * c + ci) * hw;
                        for k in 0..hw {
                            let xh = xhat(ci, base + k);
                            gx[base + k] = coef
                                * (g[base + k] - sum_g[ci] * inv_n - xh * sum_gx[ci] * inv_n);
                        }
                    }
                }
                acc(gs, *x, &gx, self);
                acc(gs, *gamma, &ggamma, self);
                acc(gs, *beta, &gbeta, self);
            }
            Op::Conv2d { x, w, spec } => {
                let sx = self.shape(*x);
                let (b, h, wd) = (sx[0], sx[2], sx[3]);
                let gx = conv::conv_bwd_input(g, b, h, wd, self.value(*w), spec);
                let gw = conv::conv_bwd_weight(self.value(*x), g, b, h, wd, spec);
                acc(gs, *x, &gx, self);
                acc(gs, *w, &gw, self);
            }
            Op::Conv2dBackInput { g: gy, w, spec, in_h, in_w } => {
                // node = conv_bwd_input(gy, w); upstream u = g.
                let sg = self.shape(*gy);
                let b = sg[0];
                // d/dgy = conv_fwd(u, w)
                let dgy = conv::conv_fwd(g, b, *in_h, *in_w, self.value(*w), spec);
                // d/dw = conv_bwd_weight(u, gy)
                let dw = conv::conv_bwd_weight(g, self.value(*gy), b, *in_h, *in_w, spec);
                acc(gs, *gy, &dgy, self);
                acc(gs, *w, &dw, self);
            }
            Op::PixelShuffle { x, r } => {
                let s = self.shape(*x);
                let (b, c_in, h, w) = (s[0], s[1], s[2], s[3]);
                let c = c_in / (r * r);
                let gx = pixel_shuffle_copy(g, b, c, *r, h, w, true);
                acc(gs, *x, &gx, self);
            }
            Op::MirrorQuad(x) => {
                let s = self.shape(*x);
                let (b, n) = (s[0], s[2]);
                let m = 2 * n;
                let mut gx = vec![E::zero(); b * n * n];
                for i in 0..b {
                    let go = &g[i * m * m..(i + 1) * m * m];
                    let gq = &mut gx[i * n * n..(i + 1) * n * n];
                    for y in 0..n {
                        for xcol in 0..n {
                            gq[y * n + xcol] = go[y * m + xcol]
                                + go[y * m + (m - 1 - xcol)]
                                + go[(m - 1 - y) * m + xcol]
                                + go[(m - 1 - y) * m + (m - 1 - xcol)];
                        }
                    }
                }
                acc(gs, *x, &gx, self);
            }
            Op::RoundTernarySt(x) => acc(gs, *x, g, self),
        }
    }
}

/// Copy with permuted axes; `shape` is the input shape.
fn permute_copy<E: Real>(data: &[E], shape: &[usize], axes: &[usize]) -> Vec<E> {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let mut out = vec![E::zero(); data.len()];
    let mut idx = vec![0usize; rank];
    for o in out.iter_mut() {
        let mut src = 0usize;
        for d in 0..rank {
            src += idx[d] * in_strides[axes[d]];
        }
        *o = data[src];
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Forward (inverse=false) or inverse (inverse=true) sub-pixel rearrangement.
/// Input channel layout is c*r*r + dy*r + dx.
fn pixel_shuffle_copy<E: Real>(
    data: &[E],
    b: usize,
    c: usize,
    r: usize,
    h: usize,
    w: usize,
    inverse: bool,
) -> Vec<E> {
    let mut out = vec![E::zero(); data.len()];
    for bi in 0..b {
        for ci in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let cin = (ci * r + dy) * r + dx;
                    for y in 0..h {
                        for x in 0..w {
                            let src = ((bi * c * r * r + cin) * h + y) * w + x;
                            let dst =
                                ((bi * c + ci) * (h * r) + (y * r + dy)) * (w * r) + (x * r + dx);
                            if inverse {
                                out[src] = data[dst];
                            } else {
                                out[dst] = data[src];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
