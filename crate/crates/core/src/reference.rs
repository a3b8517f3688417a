//! Dense reference path for neighborhood attention, used as the
//! independent oracle for the fused kernels.
//!
//! Instead of gathering neighbors on the fly, this implementation
//! materializes every query's key and value neighborhoods up front: a
//! stride-1 sliding-window extraction produces one window per interior
//! query, and replicating edge windows (the replicated-padding trick)
//! supplies border queries, whose neighborhoods consist of the same
//! pixels. The result is a pair of `H * W * heads * d * Lw^2` scalar
//! buffers — exactly the memory blow-up that motivates the fused kernels —
//! against which attention is computed densely with its own inline
//! softmax.

use crate::error::{Error, Result};
use crate::neighborhood::NeighborhoodSpec;
use crate::tensor::{Scalar, Tensor};

/// Window-grid lookup with replicated padding: maps query index `i` to the
/// origin of its extracted window. The grid holds `n - min(L, n) + 1`
/// stride-1 windows; indices past either edge replicate the edge window.
fn padded_grid_origin(i: usize, extent: usize, kernel: usize) -> usize {
    let win = kernel.min(extent);
    let grid = extent - win + 1;
    let radius = (kernel - 1) / 2;
    (i as isize - radius as isize).clamp(0, grid as isize - 1) as usize
}

/// Neighbor coordinates for query `(i, j)` as produced by the
/// unfold-plus-replication route, in row-major window order.
pub fn reference_neighbor_indices(
    i: usize,
    j: usize,
    height: usize,
    width: usize,
    spec: NeighborhoodSpec,
) -> Vec<(usize, usize)> {
    let kernel = spec.kernel();
    let (oi, oj) = (
        padded_grid_origin(i, height, kernel),
        padded_grid_origin(j, width, kernel),
    );
    let (win_h, win_w) = (kernel.min(height), kernel.min(width));
    let mut out = Vec::with_capacity(win_h * win_w);
    for wi in 0..win_h {
        for wj in 0..win_w {
            out.push((oi + wi, oj + wj));
        }
    }
    out
}

/// Materializes the neighborhoods of `x: [H, W, heads, d]` into a
/// `[H, W, heads, Lw2, d]` tensor.
fn unfold_neighborhoods<T: Scalar>(x: &Tensor<T>, spec: NeighborhoodSpec) -> Result<Tensor<T>> {
    let (height, width, heads, d) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let kernel = spec.kernel();
    let (win_h, win_w) = (kernel.min(height), kernel.min(width));
    let win_area = win_h * win_w;
    let mut out = Tensor::zeros(vec![height, width, heads, win_area, d])?;
    let x_data = x.data();
    let out_data = out.data_mut();
    for i in 0..height {
        let oi = padded_grid_origin(i, height, kernel);
        for j in 0..width {
            let oj = padded_grid_origin(j, width, kernel);
            for h in 0..heads {
                let dst_base = (((i * width + j) * heads + h) * win_area) * d;
                let mut m = 0;
                for wi in 0..win_h {
                    for wj in 0..win_w {
                        let src = (((oi + wi) * width + (oj + wj)) * heads + h) * d;
                        out_data[dst_base + m * d..dst_base + (m + 1) * d]
                            .copy_from_slice(&x_data[src..src + d]);
                        m += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Neighborhood attention computed from materialized neighborhoods.
///
/// Numerically equivalent to the fused
/// [`na_forward`](crate::attention::na_forward) but structured so the two
/// share no gather or bias-indexing code.
pub fn na_reference<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    bias: &Tensor<T>,
    spec: NeighborhoodSpec,
) -> Result<Tensor<T>> {
    if q.rank() != 4 || k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::shape(
            "na_reference",
            format!(
                "expected matching [H, W, heads, d] operands, got {:?}, {:?}, {:?}",
                q.shape(),
                k.shape(),
                v.shape()
            ),
        ));
    }
    let (height, width, heads, d) = (q.shape()[0], q.shape()[1], q.shape()[2], q.shape()[3]);
    let table = spec.bias_extent();
    if bias.shape() != [heads, table, table] {
        return Err(Error::shape(
            "na_reference",
            format!("bias table {:?} does not match kernel {}", bias.shape(), spec.kernel()),
        ));
    }

    let k_nbr = unfold_neighborhoods(k, spec)?;
    let v_nbr = unfold_neighborhoods(v, spec)?;
    let kernel = spec.kernel();
    let (win_h, win_w) = (kernel.min(height), kernel.min(width));
    let win_area = win_h * win_w;
    let half = kernel - 1;
    let inv_scale = T::from_f64(1.0 / (d as f64).sqrt());

    let mut out = Tensor::zeros(vec![height, width, heads, d])?;
    let q_data = q.data();
    let bias_data = bias.data();
    let mut logits = vec![T::ZERO; win_area];
    for i in 0..height {
        let oi = padded_grid_origin(i, height, kernel);
        for j in 0..width {
            let oj = padded_grid_origin(j, width, kernel);
            for h in 0..heads {
                let q_px = &q_data[((i * width + j) * heads + h) * d..][..d];
                let nbr_base = ((i * width + j) * heads + h) * win_area * d;
                let k_slab = &k_nbr.data()[nbr_base..nbr_base + win_area * d];
                let v_slab = &v_nbr.data()[nbr_base..nbr_base + win_area * d];

                for m in 0..win_area {
                    let (pi, pj) = (oi + m / win_w, oj + m % win_w);
                    let mut dot = T::ZERO;
                    for (qa, kb) in q_px.iter().zip(&k_slab[m * d..(m + 1) * d]) {
                        dot += *qa * *kb;
                    }
                    let b = bias_data[(h * table + (pi + half - i)) * table + (pj + half - j)];
                    logits[m] = (dot + b) * inv_scale;
                }

                // Inline stable softmax, separate from the shared kernel.
                let mut max = logits[0];
                for &l in logits.iter() {
                    if l > max {
                        max = l;
                    }
                }
                let mut norm = T::ZERO;
                for l in logits.iter_mut() {
                    *l = (*l - max).exp();
                    norm += *l;
                }

                let acc_base = ((i * width + j) * heads + h) * d;
                let acc = &mut out.data_mut()[acc_base..acc_base + d];
                for m in 0..win_area {
                    let weight = logits[m] / norm;
                    for (a, &vv) in acc.iter_mut().zip(&v_slab[m * d..(m + 1) * d]) {
                        *a += weight * vv;
                    }
                }
            }
        }
    }
    Ok(out)
}
