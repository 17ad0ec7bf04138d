//! Plain-value 2D convolution kernels (im2col + gemm) shared by the tape ops.
//!
//! The three routines form the usual adjoint triple: the derivative of each
//! one is expressible through the other two, which is what lets the gradient
//! penalty build second-order graphs out of first-class tape ops.

use super::real::{gemm_rm, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_c: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kh) / self.stride + 1,
            (w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }
}

/// Fill `cols[oh*ow, ic*kh*kw]` from one image `x[ic, h, w]`.
fn im2col<E: Real>(x: &[E], ic: usize, h: usize, w: usize, s: &ConvSpec, cols: &mut [E]) {
    let (oh, ow) = s.out_hw(h, w);
    let k = ic * s.kh * s.kw;
    debug_assert_eq!(cols.len(), oh * ow * k);
    for e in cols.iter_mut() {
        *e = E::zero();
    }
    for oy in 0..oh {
        for ox in 0..ow {
            let row = (oy * ow + ox) * k;
            for c in 0..ic {
                for ky in 0..s.kh {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let iy = iy as usize;
                    for kx in 0..s.kw {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        cols[row + (c * s.kh + ky) * s.kw + kx] =
                            x[(c * h + iy) * w + ix as usize];
                    }
                }
            }
        }
    }
}

/// Scatter-add `cols` back into one image (adjoint of `im2col`).
fn col2im<E: Real>(cols: &[E], ic: usize, h: usize, w: usize, s: &ConvSpec, x: &mut [E]) {
    let (oh, ow) = s.out_hw(h, w);
    let k = ic * s.kh * s.kw;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = (oy * ow + ox) * k;
            for c in 0..ic {
                for ky in 0..s.kh {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let iy = iy as usize;
                    for kx in 0..s.kw {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        x[(c * h + iy) * w + ix as usize] +=
                            cols[row + (c * s.kh + ky) * s.kw + kx];
                    }
                }
            }
        }
    }
}

/// y[b, oc, oh, ow] = conv(x[b, ic, h, w], w[oc, ic, kh, kw]).
pub fn conv_fwd<E: Real>(x: &[E], b: usize, h: usize, w_dim: usize, wgt: &[E], s: &ConvSpec) -> Vec<E> {
    let (oh, ow) = s.out_hw(h, w_dim);
    let k = s.in_c * s.kh * s.kw;
    let mut cols = vec![E::zero(); oh * ow * k];
    let mut y = vec![E::zero(); b * s.out_c * oh * ow];
    let xs = s.in_c * h * w_dim;
    let ys = s.out_c * oh * ow;
    for i in 0..b {
        im2col(&x[i * xs..(i + 1) * xs], s.in_c, h, w_dim, s, &mut cols);
        // y_i[oc, oh*ow] = W[oc, k] * cols^T[k, oh*ow]
        gemm_rm(
            s.out_c,
            k,
            oh * ow,
            wgt,
            false,
            &cols,
            true,
            &mut y[i * ys..(i + 1) * ys],
            false,
        );
    }
    y
}

/// gx = adjoint of `conv_fwd` in its input: gx[b, ic, h, w] from gy[b, oc, oh, ow].
pub fn conv_bwd_input<E: Real>(
    gy: &[E],
    b: usize,
    h: usize,
    w_dim: usize,
    wgt: &[E],
    s: &ConvSpec,
) -> Vec<E> {
    let (oh, ow) = s.out_hw(h, w_dim);
    let k = s.in_c * s.kh * s.kw;
    let mut cols = vec![E::zero(); oh * ow * k];
    let mut gx = vec![E::zero(); b * s.in_c * h * w_dim];
    let xs = s.in_c * h * w_dim;
    let ys = s.out_c * oh * ow;
    for i in 0..b {
        // cols[oh*ow, k] = gy_i^T[oh*ow, oc] * W[oc, k]
        gemm_rm(
            oh * ow,
            s.out_c,
            k,
            &gy[i * ys..(i + 1) * ys],
            true,
            wgt,
            false,
            &mut cols,
            false,
        );
        col2im(&cols, s.in_c, h, w_dim, s, &mut gx[i * xs..(i + 1) * xs]);
    }
    gx
}

/// gw[oc, ic, kh, kw] accumulated over the batch from x and gy.
pub fn conv_bwd_weight<E: Real>(
    x: &[E],
    gy: &[E],
    b: usize,
    h: usize,
    w_dim: usize,
    s: &ConvSpec,
) -> Vec<E> {
    let (oh, ow) = s.out_hw(h, w_dim);
    let k = s.in_c * s.kh * s.kw;
    let mut cols = vec![E::zero(); oh * ow * k];
    let mut gw = vec![E::zero(); s.out_c * k];
    let xs = s.in_c * h * w_dim;
    let ys = s.out_c * oh * ow;
    for i in 0..b {
        im2col(&x[i * xs..(i + 1) * xs], s.in_c, h, w_dim, s, &mut cols);
        // gw[oc, k] += gy_i[oc, oh*ow] * cols[oh*ow, k]
        gemm_rm(
            s.out_c,
            oh * ow,
            k,
            &gy[i * ys..(i + 1) * ys],
            false,
            &cols,
            false,
            &mut gw,
            true,
        );
    }
    gw
}
