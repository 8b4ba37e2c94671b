//! im2col-based kernels for 1D convolution and its transpose.

use serde::{Deserialize, Serialize};

use crate::tensor::{gemm, MatRef, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeom {
    /// Length-preserving geometry for an odd kernel.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            dilation: 1,
            pad_left: (kernel - 1) / 2,
            pad_right: kernel / 2,
        }
    }

    /// Left-padded so output t only sees inputs <= t.
    pub fn causal(kernel: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            dilation,
            pad_left: dilation * (kernel - 1),
            pad_right: 0,
        }
    }

    pub fn strided(kernel: usize, stride: usize) -> Self {
        Self {
            stride,
            ..Self::same(kernel)
        }
    }

    pub fn pointwise() -> Self {
        Self::same(1)
    }

    /// Output length of a convolution over `len` samples, if positive.
    pub fn out_len(&self, len: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = len + self.pad_left + self.pad_right;
        (self.stride > 0 && self.dilation > 0 && padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    /// Output length of the transposed convolution over `len` samples.
    pub fn transposed_out_len(&self, len: usize, kernel: usize) -> Option<usize> {
        let full = (len.checked_sub(1)?) * self.stride + self.dilation * (kernel - 1) + 1;
        full.checked_sub(self.pad_left + self.pad_right).filter(|&l| l > 0)
    }

    fn is_identity(&self, kernel: usize) -> bool {
        kernel == 1 && self.stride == 1 && self.pad_left == 0 && self.pad_right == 0
    }

    /// Input index feeding output `t` through tap `k`, if inside the signal.
    #[inline]
    fn source(&self, t: usize, k: usize, len: usize) -> Option<usize> {
        let pos = (t * self.stride + k * self.dilation).checked_sub(self.pad_left)?;
        (pos < len).then_some(pos)
    }
}

/// `col[(c * kernel + k) * out_len + t] = x[c][source(t, k)]`, zero outside.
pub fn im2col<T: Real>(x: &[T], channels: usize, len: usize, kernel: usize, geom: &ConvGeom, out_len: usize, col: &mut [T]) {
    for c in 0..channels {
        let row = &x[c * len..(c + 1) * len];
        for k in 0..kernel {
            let dst = &mut col[(c * kernel + k) * out_len..(c * kernel + k + 1) * out_len];
            for (t, d) in dst.iter_mut().enumerate() {
                *d = geom.source(t, k, len).map_or(T::zero(), |p| row[p]);
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col` back, accumulating into `x`.
pub fn col2im_add<T: Real>(col: &[T], channels: usize, len: usize, kernel: usize, geom: &ConvGeom, out_len: usize, x: &mut [T]) {
    for c in 0..channels {
        let row = &mut x[c * len..(c + 1) * len];
        for k in 0..kernel {
            let src = &col[(c * kernel + k) * out_len..(c * kernel + k + 1) * out_len];
            for (t, &v) in src.iter().enumerate() {
                if let Some(p) = geom.source(t, k, len) {
                    row[p] += v;
                }
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub len_in: usize,
    pub len_out: usize,
}

/// y[b] = W * im2col(x[b]) + bias, W: [c_out][c_in * kernel].
pub(crate) fn conv_forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, d: &ConvDims, geom: &ConvGeom) -> Vec<T> {
    let ck = d.c_in * d.kernel;
    let mut y = vec![T::zero(); d.batch * d.c_out * d.len_out];
    let mut col = vec![T::zero(); ck * d.len_out];
    for b in 0..d.batch {
        let xb = &x[b * d.c_in * d.len_in..(b + 1) * d.c_in * d.len_in];
        let yb = &mut y[b * d.c_out * d.len_out..(b + 1) * d.c_out * d.len_out];
        let rhs = if geom.is_identity(d.kernel) {
            xb
        } else {
            im2col(xb, d.c_in, d.len_in, d.kernel, geom, d.len_out, &mut col);
            &col
        };
        gemm(d.c_out, ck, d.len_out, T::one(), MatRef::new(w, ck), MatRef::new(rhs, d.len_out), T::zero(), yb);
        if let Some(bias) = bias {
            add_bias(yb, bias, d.len_out);
        }
    }
    y
}

/// Gradients of [`conv_forward`] with respect to the requested operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    x: &[T],
    w: &[T],
    gy: &[T],
    d: &ConvDims,
    geom: &ConvGeom,
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    mut gb: Option<&mut [T]>,
) {
    let ck = d.c_in * d.kernel;
    let identity = geom.is_identity(d.kernel);
    let mut col = vec![T::zero(); ck * d.len_out];
    for b in 0..d.batch {
        let xb = &x[b * d.c_in * d.len_in..(b + 1) * d.c_in * d.len_in];
        let gyb = &gy[b * d.c_out * d.len_out..(b + 1) * d.c_out * d.len_out];
        if let Some(gw) = gw.as_deref_mut() {
            let rhs = if identity {
                xb
            } else {
                im2col(xb, d.c_in, d.len_in, d.kernel, geom, d.len_out, &mut col);
                &col
            };
            gemm(d.c_out, d.len_out, ck, T::one(), MatRef::new(gyb, d.len_out), MatRef::new(rhs, d.len_out).t(), T::one(), gw);
        }
        if let Some(gb) = gb.as_deref_mut() {
            accumulate_bias(gb, gyb, d.len_out);
        }
        if let Some(gx) = gx.as_deref_mut() {
            let gxb = &mut gx[b * d.c_in * d.len_in..(b + 1) * d.c_in * d.len_in];
            if identity {
                gemm(ck, d.c_out, d.len_out, T::one(), MatRef::new(w, ck).t(), MatRef::new(gyb, d.len_out), T::one(), gxb);
            } else {
                gemm(ck, d.c_out, d.len_out, T::one(), MatRef::new(w, ck).t(), MatRef::new(gyb, d.len_out), T::zero(), &mut col);
                col2im_add(&col, d.c_in, d.len_in, d.kernel, geom, d.len_out, gxb);
            }
        }
    }
}

/// Transposed convolution, W: [c_in][c_out * kernel]. `geom` describes the
/// forward convolution this operator is the adjoint of, mapping `len_out`
/// samples to `len_in`.
pub(crate) fn conv_transpose_forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, d: &ConvDims, geom: &ConvGeom) -> Vec<T> {
    let ck = d.c_out * d.kernel;
    let mut y = vec![T::zero(); d.batch * d.c_out * d.len_out];
    let mut col = vec![T::zero(); ck * d.len_in];
    for b in 0..d.batch {
        let xb = &x[b * d.c_in * d.len_in..(b + 1) * d.c_in * d.len_in];
        let yb = &mut y[b * d.c_out * d.len_out..(b + 1) * d.c_out * d.len_out];
        gemm(ck, d.c_in, d.len_in, T::one(), MatRef::new(w, ck).t(), MatRef::new(xb, d.len_in), T::zero(), &mut col);
        col2im_add(&col, d.c_out, d.len_out, d.kernel, geom, d.len_in, yb);
        if let Some(bias) = bias {
            add_bias(yb, bias, d.len_out);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose_backward<T: Real>(
    x: &[T],
    w: &[T],
    gy: &[T],
    d: &ConvDims,
    geom: &ConvGeom,
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    mut gb: Option<&mut [T]>,
) {
    let ck = d.c_out * d.kernel;
    let mut col = vec![T::zero(); ck * d.len_in];
    for b in 0..d.batch {
        let xb = &x[b * d.c_in * d.len_in..(b + 1) * d.c_in * d.len_in];
        let gyb = &gy[b * d.c_out * d.len_out..(b + 1) * d.c_out * d.len_out];
        if let Some(gb) = gb.as_deref_mut() {
            accumulate_bias(gb, gyb, d.len_out);
        }
        if gx.is_none() && gw.is_none() {
            continue;
        }
        im2col(gyb, d.c_out, d.len_out, d.kernel, geom, d.len_in, &mut col);
        if let Some(gx) = gx.as_deref_mut() {
            let gxb = &mut gx[b * d.c_in * d.len_in..(b + 1) * d.c_in * d.len_in];
            gemm(d.c_in, ck, d.len_in, T::one(), MatRef::new(w, ck), MatRef::new(&col, d.len_in), T::one(), gxb);
        }
        if let Some(gw) = gw.as_deref_mut() {
            gemm(d.c_in, d.len_in, ck, T::one(), MatRef::new(xb, d.len_in), MatRef::new(&col, d.len_in).t(), T::one(), gw);
        }
    }
}

fn add_bias<T: Real>(y: &mut [T], bias: &[T], len: usize) {
    for (row, &b) in y.chunks_exact_mut(len).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_bias<T: Real>(gb: &mut [T], gy: &[T], len: usize) {
    for (g, row) in gb.iter_mut().zip(gy.chunks_exact(len)) {
        *g += row.iter().copied().sum::<T>();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_lengths() {
        assert_eq!(ConvGeom::same(7).out_len(512, 7), Some(512));
        assert_eq!(ConvGeom::strided(3, 2).out_len(512, 3), Some(256));
        assert_eq!(ConvGeom::strided(1, 2).out_len(512, 1), Some(256));
        assert_eq!(ConvGeom::causal(2, 64).out_len(512, 2), Some(512));
        let up = ConvGeom { stride: 2, dilation: 1, pad_left: 1, pad_right: 1 };
        assert_eq!(up.transposed_out_len(64, 4), Some(128));
        assert_eq!(up.out_len(128, 4), Some(64));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for arbitrary x, c
        let geom = ConvGeom { stride: 2, dilation: 3, pad_left: 4, pad_right: 1 };
        let (ch, len, k) = (3, 17, 3);
        let out = geom.out_len(len, k).unwrap();
        let x: Vec<f64> = (0..ch * len).map(|v| (v as f64 * 0.7).sin()).collect();
        let c: Vec<f64> = (0..ch * k * out).map(|v| (v as f64 * 0.3).cos()).collect();
        let mut col = vec![0.0; ch * k * out];
        im2col(&x, ch, len, k, &geom, out, &mut col);
        let mut back = vec![0.0; ch * len];
        col2im_add(&c, ch, len, k, &geom, out, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
