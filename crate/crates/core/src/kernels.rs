//! Dense and row-condensed matrix kernels.
//!
//! Every product here is `out = A · B` with `A: m x k` and `B: k x n`, computed
//! as a sequence of row updates `out[i, :] += A[i, kk] * B[kk, :]` in
//! ascending `kk`. A WTA mask over the inner dimension turns into skipping the
//! dropped `kk` entirely; the remaining updates happen in the same order as in
//! the dense kernel, so a condensed product matches the dense product of the
//! masked input exactly up to the sign of zero.
//!
//! Convolutions go through im2col with channel-major rows
//! (`row = c * F^2 + ky * F + kx`), so dropping a channel drops a contiguous
//! block of `F^2` rows.

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Tensor};
use crate::wta::WtaMask;

#[inline]
fn axpy(out: &mut [f32], alpha: f32, x: &[f32]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// `out = A · B` over all inner indices. `out` is overwritten.
pub fn dense_gemm_into(a: &[f32], m: usize, k: usize, b: &[f32], n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&w, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            axpy(out_row, w, b_row);
        }
    }
}

/// `out = A · B` restricted to the inner indices in `winners` (ascending).
pub fn condensed_gemm_into(
    a: &[f32],
    m: usize,
    k: usize,
    b: &[f32],
    n: usize,
    winners: &[usize],
    out: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    out.fill(0.0);
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for &kk in winners {
            axpy(out_row, a_row[kk], &b[kk * n..(kk + 1) * n]);
        }
    }
}

/// `out = A[:, a_cols] · B_compact`, where row `r` of the compacted `B`
/// pairs with column `a_cols[r]` of `A`.
pub fn compact_gemm_into(
    a: &[f32],
    m: usize,
    k: usize,
    b_compact: &[f32],
    n: usize,
    a_cols: &[usize],
    out: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b_compact.len(), a_cols.len() * n);
    out.fill(0.0);
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&kk, b_row) in a_cols.iter().zip(b_compact.chunks_exact(n)) {
            axpy(out_row, a_row[kk], b_row);
        }
    }
}

/// Views `b` as `k x n`; a rank-1 `b` is a column vector.
fn rhs_dims(b: &Tensor) -> Result<(usize, usize, bool)> {
    match b.shape() {
        &[k] => Ok((k, 1, true)),
        &[k, n] => Ok((k, n, false)),
        other => Err(Error::Shape(format!(
            "right operand must be a vector or matrix, got shape {other:?}"
        ))),
    }
}

fn product_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, bool)> {
    let (m, k) = a.matrix_dims()?;
    let (kb, n, vector) = rhs_dims(b)?;
    if k != kb {
        return Err(Error::Shape(format!(
            "inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok((m, k, n, vector))
}

fn product_tensor(m: usize, n: usize, vector: bool, data: Vec<f32>) -> Result<Tensor> {
    if vector {
        Tensor::new(vec![m], data)
    } else {
        Tensor::new(vec![m, n], data)
    }
}

/// Standard product `A · B`. A rank-1 `B` yields a rank-1 result.
pub fn dense_gemm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n, vector) = product_dims(a, b)?;
    let mut out = vec![0.0; m * n];
    dense_gemm_into(a.data(), m, k, b.data(), n, &mut out);
    product_tensor(m, n, vector, out)
}

/// `A · mask(B)` computed by visiting only the winner rows of `B` and the
/// matching columns of `A`. Costs `|winners| * m * n` MACs.
pub fn condensed_gemm(a: &Tensor, b: &Tensor, mask: &WtaMask) -> Result<Tensor> {
    let (m, k, n, vector) = product_dims(a, b)?;
    if mask.total() != k {
        return Err(Error::Shape(format!(
            "mask covers {} inner indices, product has {k}",
            mask.total()
        )));
    }
    let mut out = vec![0.0; m * n];
    condensed_gemm_into(a.data(), m, k, b.data(), n, mask.winners(), &mut out);
    product_tensor(m, n, vector, out)
}

/// Window size, stride and zero padding of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad }
    }

    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let dim = |d: usize| -> Result<usize> {
            let padded = d + 2 * self.pad;
            if self.kernel == 0 || self.stride == 0 || padded < self.kernel {
                return Err(Error::Shape(format!(
                    "window {} with stride {} and pad {} does not fit input extent {d}",
                    self.kernel, self.stride, self.pad
                )));
            }
            Ok((padded - self.kernel) / self.stride + 1)
        };
        Ok((dim(height)?, dim(width)?))
    }

    pub fn window(&self) -> usize {
        self.kernel * self.kernel
    }
}

/// Writes the im2col rows of the listed channels (in the given order) of a
/// channel-last `h x w x c` map. `out` must hold `channels.len() * F^2 * H_out * W_out` values.
pub(crate) fn im2col_channels_into(
    data: &[f32],
    (h, w, c): (usize, usize, usize),
    geom: ConvGeometry,
    channels: impl Iterator<Item = usize>,
    out: &mut [f32],
) -> Result<(usize, usize)> {
    let (oh, ow) = geom.output_dims(h, w)?;
    let f = geom.kernel;
    let cols = oh * ow;
    let mut rows = out.chunks_exact_mut(cols);
    for ch in channels {
        for ky in 0..f {
            for kx in 0..f {
                let row = rows.next().expect("im2col output buffer too small");
                for oy in 0..oh {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let base = iy as usize * w;
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            data[(base + ix as usize) * c + ch]
                        };
                    }
                }
            }
        }
    }
    Ok((oh, ow))
}

/// Unrolls `fm` into a `(F^2 * C) x (H_out * W_out)` matrix.
pub fn im2col(fm: &FeatureMap, geom: ConvGeometry) -> Result<Tensor> {
    let (oh, ow) = geom.output_dims(fm.height(), fm.width())?;
    let rows = geom.window() * fm.channels();
    let mut out = vec![0.0; rows * oh * ow];
    im2col_channels_into(
        fm.data(),
        (fm.height(), fm.width(), fm.channels()),
        geom,
        0..fm.channels(),
        &mut out,
    )?;
    Tensor::new(vec![rows, oh * ow], out)
}

/// im2col restricted to the winner channels of `mask`:
/// a `(F^2 * |winners|) x (H_out * W_out)` matrix.
pub fn im2col_masked(fm: &FeatureMap, mask: &WtaMask, geom: ConvGeometry) -> Result<Tensor> {
    if mask.total() != fm.channels() {
        return Err(Error::Shape(format!(
            "channel mask covers {} channels, feature map has {}",
            mask.total(),
            fm.channels()
        )));
    }
    let (oh, ow) = geom.output_dims(fm.height(), fm.width())?;
    let rows = geom.window() * mask.winner_count();
    let mut out = vec![0.0; rows * oh * ow];
    im2col_channels_into(
        fm.data(),
        (fm.height(), fm.width(), fm.channels()),
        geom,
        mask.winners().iter().copied(),
        &mut out,
    )?;
    Tensor::new(vec![rows, oh * ow], out)
}

/// Filter columns matching the rows of [`im2col_masked`].
pub fn winner_filter_columns(mask: &WtaMask, window: usize) -> Vec<usize> {
    mask.winners()
        .iter()
        .flat_map(|&c| c * window..(c + 1) * window)
        .collect()
}

fn check_filters(filters: &Tensor, channels: usize, geom: ConvGeometry) -> Result<(usize, usize)> {
    let (n, k) = filters.matrix_dims()?;
    if k != channels * geom.window() {
        return Err(Error::Shape(format!(
            "filters have {k} columns, expected {} for {channels} channels of a {}x{} window",
            channels * geom.window(),
            geom.kernel,
            geom.kernel
        )));
    }
    Ok((n, k))
}

/// Reference convolution: full im2col followed by [`dense_gemm`].
/// `filters` is `N x (C * F^2)`; the result is `N x (H_out * W_out)`.
pub fn conv_dense(filters: &Tensor, fm: &FeatureMap, geom: ConvGeometry) -> Result<Tensor> {
    check_filters(filters, fm.channels(), geom)?;
    dense_gemm(filters, &im2col(fm, geom)?)
}

/// Convolution over the winner channels only: condensed im2col plus the
/// matching filter columns.
pub fn conv_condensed(
    filters: &Tensor,
    fm: &FeatureMap,
    mask: &WtaMask,
    geom: ConvGeometry,
) -> Result<Tensor> {
    let (n, k) = check_filters(filters, fm.channels(), geom)?;
    let cols = im2col_masked(fm, mask, geom)?;
    let (_, m) = cols.matrix_dims()?;
    let a_cols = winner_filter_columns(mask, geom.window());
    let mut out = vec![0.0; n * m];
    compact_gemm_into(filters.data(), n, k, cols.data(), m, &a_cols, &mut out);
    Tensor::new(vec![n, m], out)
}
