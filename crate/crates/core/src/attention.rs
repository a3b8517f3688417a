//! Neighborhood attention kernels.
//!
//! Queries, keys, and values live on an `H x W` map with shape
//! `[H, W, heads, d]`. Each query attends to the `min(L,H) * min(L,W)`
//! pixels of its neighborhood; the attention-weight buffer is
//! `[H, W, heads, Lw2]` with one row per (query, head).
//!
//! The QK kernel is fused: the relative positional bias is added while the
//! dot products are computed, and the whole numerator is divided by
//! `sqrt(d)`. The AV kernel contracts the softmaxed weights against the
//! gathered values. `na_backward` provides exact analytic gradients of the
//! composition, including the scatter into the bias table.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::neighborhood::{window_start, NeighborhoodSpec};
use crate::tensor::{linear, softmax_last, Scalar, Tensor};

/// Gradients of [`na_forward`] with respect to every input.
#[derive(Debug, Clone)]
pub struct AttentionGrads<T: Scalar> {
    pub d_q: Tensor<T>,
    pub d_k: Tensor<T>,
    pub d_v: Tensor<T>,
    pub d_bias: Tensor<T>,
}

/// Weights of one multi-head neighborhood attention layer.
#[derive(Debug, Clone)]
pub struct AttentionParams<T: Scalar> {
    pub heads: usize,
    /// `[C, 3C]`, column blocks ordered Q, K, V; within each block channel
    /// `c` belongs to head `c / d`.
    pub qkv_weight: Tensor<T>,
    pub qkv_bias: Tensor<T>,
    /// `[C, C]` output projection.
    pub proj_weight: Tensor<T>,
    pub proj_bias: Tensor<T>,
    /// `[heads, 2L-1, 2L-1]` relative positional bias table.
    pub bias_table: Tensor<T>,
}

struct MapDims {
    height: usize,
    width: usize,
    heads: usize,
    head_dim: usize,
    win_h: usize,
    win_w: usize,
}

impl MapDims {
    fn win_area(&self) -> usize {
        self.win_h * self.win_w
    }
}

fn check_map_inputs<T: Scalar>(
    op: &'static str,
    q: &Tensor<T>,
    others: &[&Tensor<T>],
    bias: &Tensor<T>,
    spec: NeighborhoodSpec,
) -> Result<MapDims> {
    if q.rank() != 4 {
        return Err(Error::shape(
            op,
            format!("expected [H, W, heads, d], got {:?}", q.shape()),
        ));
    }
    for other in others {
        if other.shape() != q.shape() {
            return Err(Error::shape(
                op,
                format!("tensor shapes disagree: {:?} vs {:?}", q.shape(), other.shape()),
            ));
        }
    }
    let heads = q.shape()[2];
    let table = spec.bias_extent();
    if bias.shape() != [heads, table, table] {
        return Err(Error::shape(
            op,
            format!(
                "bias table {:?} does not match heads {heads} and kernel {}",
                bias.shape(),
                spec.kernel()
            ),
        ));
    }
    let height = q.shape()[0];
    let width = q.shape()[1];
    Ok(MapDims {
        height,
        width,
        heads,
        head_dim: q.shape()[3],
        win_h: spec.kernel().min(height),
        win_w: spec.kernel().min(width),
    })
}

/// Fused attention-weight kernel.
///
/// `logit[i,j,h,m] = (Q[i,j,h] . K[p(m),h] + bias[h, rb_i, rb_j]) / sqrt(d)`
/// where `p(m)` enumerates the query's neighborhood in row-major order and
/// `(rb_i, rb_j)` is the relative offset of `p(m)` shifted into the bias
/// table. Returns raw logits of shape `[H, W, heads, Lw2]`.
pub fn na_qk<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    bias: &Tensor<T>,
    spec: NeighborhoodSpec,
) -> Result<Tensor<T>> {
    let dims = check_map_inputs("na_qk", q, &[k], bias, spec)?;
    let win_area = dims.win_area();
    let mut out = Tensor::zeros(vec![dims.height, dims.width, dims.heads, win_area])?;

    let q_data = q.data();
    let k_data = k.data();
    let bias_data = bias.data();
    let table = spec.bias_extent();
    let half = spec.kernel() - 1;
    let d = dims.head_dim;
    let heads = dims.heads;
    let width = dims.width;
    let inv_scale = T::from_f64(1.0 / (d as f64).sqrt());
    let row_len = width * heads * win_area;

    let fill_row = |i: usize, out_row: &mut [T]| {
        let rows = window_start(i, dims.height, spec).expect("query row in range");
        for j in 0..width {
            let cols = window_start(j, width, spec).expect("query col in range");
            for h in 0..heads {
                let q_px = &q_data[((i * width + j) * heads + h) * d..][..d];
                let out_slice =
                    &mut out_row[(j * heads + h) * win_area..(j * heads + h + 1) * win_area];
                let mut m = 0;
                for pi in rows.start..rows.start + rows.len {
                    let rb_i = pi + half - i;
                    for pj in cols.start..cols.start + cols.len {
                        let rb_j = pj + half - j;
                        let k_px = &k_data[((pi * width + pj) * heads + h) * d..][..d];
                        let mut dot = T::ZERO;
                        for (qa, kb) in q_px.iter().zip(k_px) {
                            dot += *qa * *kb;
                        }
                        out_slice[m] =
                            (dot + bias_data[(h * table + rb_i) * table + rb_j]) * inv_scale;
                        m += 1;
                    }
                }
            }
        }
    };

    if out.numel() >= 4096 && dims.height > 1 {
        out.data_mut()
            .par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| fill_row(i, row));
    } else {
        for (i, row) in out.data_mut().chunks_mut(row_len).enumerate() {
            fill_row(i, row);
        }
    }
    Ok(out)
}

/// Applies normalized attention weights to the gathered values:
/// `out[i,j,h] = sum_m probs[i,j,h,m] * V[p(m),h]`, summed in neighborhood
/// order.
pub fn na_av<T: Scalar>(
    probs: &Tensor<T>,
    v: &Tensor<T>,
    spec: NeighborhoodSpec,
) -> Result<Tensor<T>> {
    if v.rank() != 4 || probs.rank() != 4 {
        return Err(Error::shape(
            "na_av",
            format!("expected rank-4 inputs, got {:?} and {:?}", probs.shape(), v.shape()),
        ));
    }
    let (height, width, heads, d) = (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]);
    let win_area = spec.kernel().min(height) * spec.kernel().min(width);
    if probs.shape() != [height, width, heads, win_area] {
        return Err(Error::shape(
            "na_av",
            format!(
                "weights {:?} do not match values {:?} with kernel {}",
                probs.shape(),
                v.shape(),
                spec.kernel()
            ),
        ));
    }
    let mut out = Tensor::zeros(vec![height, width, heads, d])?;
    let p_data = probs.data();
    let v_data = v.data();
    let row_len = width * heads * d;

    let fill_row = |i: usize, out_row: &mut [T]| {
        let rows = window_start(i, height, spec).expect("query row in range");
        for j in 0..width {
            let cols = window_start(j, width, spec).expect("query col in range");
            for h in 0..heads {
                let p_slice = &p_data[((i * width + j) * heads + h) * win_area..][..win_area];
                let acc = &mut out_row[(j * heads + h) * d..(j * heads + h + 1) * d];
                let mut m = 0;
                for pi in rows.start..rows.start + rows.len {
                    for pj in cols.start..cols.start + cols.len {
                        let weight = p_slice[m];
                        let v_px = &v_data[((pi * width + pj) * heads + h) * d..][..d];
                        for (a, &vv) in acc.iter_mut().zip(v_px) {
                            *a += weight * vv;
                        }
                        m += 1;
                    }
                }
            }
        }
    };

    if out.numel() >= 4096 && height > 1 {
        out.data_mut()
            .par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| fill_row(i, row));
    } else {
        for (i, row) in out.data_mut().chunks_mut(row_len).enumerate() {
            fill_row(i, row);
        }
    }
    Ok(out)
}

/// Full neighborhood attention: softmaxed fused logits applied to values.
pub fn na_forward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    bias: &Tensor<T>,
    spec: NeighborhoodSpec,
) -> Result<Tensor<T>> {
    check_map_inputs("na_forward", q, &[k, v], bias, spec)?;
    let logits = na_qk(q, k, bias, spec)?;
    let probs = softmax_last(&logits)?;
    na_av(&probs, v, spec)
}

/// Exact gradients of [`na_forward`] with respect to Q, K, V, and the bias
/// table, given the output cotangent `d_out`.
///
/// Runs single-threaded: every (query, head) scatters into shared dK/dV/
/// dBias buffers, and a fixed traversal order keeps the accumulation
/// deterministic.
pub fn na_backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    bias: &Tensor<T>,
    spec: NeighborhoodSpec,
    d_out: &Tensor<T>,
) -> Result<AttentionGrads<T>> {
    let dims = check_map_inputs("na_backward", q, &[k, v, d_out], bias, spec)?;
    let logits = na_qk(q, k, bias, spec)?;
    let probs = softmax_last(&logits)?;

    let mut d_q = Tensor::zeros(q.shape().to_vec())?;
    let mut d_k = Tensor::zeros(k.shape().to_vec())?;
    let mut d_v = Tensor::zeros(v.shape().to_vec())?;
    let mut d_bias = Tensor::zeros(bias.shape().to_vec())?;

    let (height, width, heads, d) = (dims.height, dims.width, dims.heads, dims.head_dim);
    let win_area = dims.win_area();
    let table = spec.bias_extent();
    let half = spec.kernel() - 1;
    let inv_scale = T::from_f64(1.0 / (d as f64).sqrt());

    let q_data = q.data();
    let k_data = k.data();
    let v_data = v.data();
    let p_data = probs.data();
    let dout_data = d_out.data();

    let mut d_probs = vec![T::ZERO; win_area];
    for i in 0..height {
        let rows = window_start(i, height, spec)?;
        for j in 0..width {
            let cols = window_start(j, width, spec)?;
            for h in 0..heads {
                let base = ((i * width + j) * heads + h) * d;
                let dout_px = &dout_data[base..base + d];
                let q_px = &q_data[base..base + d];
                let p_slice = &p_data[((i * width + j) * heads + h) * win_area..][..win_area];

                // dProbs[m] = dOut . V[p(m)];  dV[p(m)] += probs[m] * dOut
                let mut m = 0;
                for pi in rows.start..rows.start + rows.len {
                    for pj in cols.start..cols.start + cols.len {
                        let v_base = ((pi * width + pj) * heads + h) * d;
                        let v_px = &v_data[v_base..v_base + d];
                        let mut acc = T::ZERO;
                        for (&g, &vv) in dout_px.iter().zip(v_px) {
                            acc += g * vv;
                        }
                        d_probs[m] = acc;
                        let dv_px = &mut d_v.data_mut()[v_base..v_base + d];
                        let weight = p_slice[m];
                        for (dv, &g) in dv_px.iter_mut().zip(dout_px) {
                            *dv += weight * g;
                        }
                        m += 1;
                    }
                }

                // Softmax backward: dLogit = p * (dProbs - <dProbs, p>).
                let mut inner = T::ZERO;
                for (dp, &p) in d_probs.iter().zip(p_slice) {
                    inner += *dp * p;
                }

                // Chain through the 1/scale factor into Q, K, and bias.
                let mut m = 0;
                for pi in rows.start..rows.start + rows.len {
                    let rb_i = pi + half - i;
                    for pj in cols.start..cols.start + cols.len {
                        let rb_j = pj + half - j;
                        let d_num = p_slice[m] * (d_probs[m] - inner) * inv_scale;
                        let k_base = ((pi * width + pj) * heads + h) * d;
                        {
                            let dq_px = &mut d_q.data_mut()[base..base + d];
                            let k_px = &k_data[k_base..k_base + d];
                            for (dq, &kv) in dq_px.iter_mut().zip(k_px) {
                                *dq += d_num * kv;
                            }
                        }
                        {
                            let dk_px = &mut d_k.data_mut()[k_base..k_base + d];
                            for (dk, &qv) in dk_px.iter_mut().zip(q_px) {
                                *dk += d_num * qv;
                            }
                        }
                        d_bias.data_mut()[(h * table + rb_i) * table + rb_j] += d_num;
                        m += 1;
                    }
                }
            }
        }
    }

    Ok(AttentionGrads { d_q, d_k, d_v, d_bias })
}

/// Plain scaled dot-product attention over a flat token axis:
/// `softmax(Q K^T / sqrt(d)) V` with `Q, K, V: [M, d]`.
pub fn self_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<Tensor<T>> {
    if q.rank() != 2 || k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::shape(
            "self_attention",
            format!(
                "expected matching [M, d] operands, got {:?}, {:?}, {:?}",
                q.shape(),
                k.shape(),
                v.shape()
            ),
        ));
    }
    let (m, d) = (q.shape()[0], q.shape()[1]);
    let inv_scale = T::from_f64(1.0 / (d as f64).sqrt());
    let mut logits = Tensor::zeros(vec![m, m])?;
    let q_data = q.data();
    let k_data = k.data();
    for (row, out_row) in logits.data_mut().chunks_mut(m).enumerate() {
        let q_px = &q_data[row * d..(row + 1) * d];
        for (col, out) in out_row.iter_mut().enumerate() {
            let k_px = &k_data[col * d..(col + 1) * d];
            let mut dot = T::ZERO;
            for (&a, &b) in q_px.iter().zip(k_px) {
                dot += a * b;
            }
            *out = dot * inv_scale;
        }
    }
    let probs = softmax_last(&logits)?;
    crate::tensor::matmul(&probs, v)
}

/// Multi-head neighborhood attention layer: QKV projection, per-head
/// neighborhood attention, head merge, output projection.
pub fn mhna_layer<T: Scalar>(
    x: &Tensor<T>,
    params: &AttentionParams<T>,
    spec: NeighborhoodSpec,
) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::shape(
            "mhna_layer",
            format!("expected [H, W, C], got {:?}", x.shape()),
        ));
    }
    let (height, width, channels) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let heads = params.heads;
    if heads == 0 || channels % heads != 0 {
        return Err(Error::Config(format!(
            "channel count {channels} is not divisible by {heads} heads"
        )));
    }
    let d = channels / heads;
    if params.qkv_weight.shape() != [channels, 3 * channels] {
        return Err(Error::shape(
            "mhna_layer",
            format!(
                "qkv weight {:?}, expected [{channels}, {}]",
                params.qkv_weight.shape(),
                3 * channels
            ),
        ));
    }
    if params.proj_weight.shape() != [channels, channels] {
        return Err(Error::shape(
            "mhna_layer",
            format!("proj weight {:?}, expected [{channels}, {channels}]", params.proj_weight.shape()),
        ));
    }

    let qkv = linear(x, &params.qkv_weight, &params.qkv_bias)?;
    let qkv_data = qkv.data();
    let px_count = height * width;
    let mut q = Tensor::zeros(vec![height, width, heads, d])?;
    let mut k = Tensor::zeros(vec![height, width, heads, d])?;
    let mut v = Tensor::zeros(vec![height, width, heads, d])?;
    // Channel c of each block belongs to head c / d.
    for px in 0..px_count {
        let src = &qkv_data[px * 3 * channels..(px + 1) * 3 * channels];
        let dst_base = px * channels;
        q.data_mut()[dst_base..dst_base + channels].copy_from_slice(&src[..channels]);
        k.data_mut()[dst_base..dst_base + channels].copy_from_slice(&src[channels..2 * channels]);
        v.data_mut()[dst_base..dst_base + channels].copy_from_slice(&src[2 * channels..]);
    }

    let attended = na_forward(&q, &k, &v, &params.bias_table, spec)?;
    // Heads-major channel layout means the merged [H, W, C] buffer is the
    // attention output reinterpreted.
    let merged = attended.reshape(vec![height, width, channels])?;
    linear(&merged, &params.proj_weight, &params.proj_bias)
}

impl<T: Scalar> AttentionParams<T> {
    /// Truncated-normal (sigma 0.02) projection weights, zero projection
    /// biases, zero bias table.
    pub fn random_init(
        channels: usize,
        heads: usize,
        spec: NeighborhoodSpec,
        rng: &mut crate::rng::Rng,
    ) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "channel count {channels} is not divisible by {heads} heads"
            )));
        }
        let trunc =
            |shape: Vec<usize>, rng: &mut crate::rng::Rng| -> Result<Tensor<T>> {
                let numel: usize = shape.iter().product();
                let data = (0..numel)
                    .map(|_| T::from_f64(rng.truncated_normal(0.02)))
                    .collect();
                Tensor::new(shape, data)
            };
        let table = spec.bias_extent();
        Ok(Self {
            heads,
            qkv_weight: trunc(vec![channels, 3 * channels], rng)?,
            qkv_bias: Tensor::zeros(vec![3 * channels])?,
            proj_weight: trunc(vec![channels, channels], rng)?,
            proj_bias: Tensor::zeros(vec![channels])?,
            bias_table: Tensor::zeros(vec![heads, table, table])?,
        })
    }
}

/// Flattens `[H, W, heads, d]` map tensors to per-head `[H*W, d]` matrices,
/// used when comparing neighborhood attention against plain self attention.
pub fn flatten_head<T: Scalar>(x: &Tensor<T>, head: usize) -> Tensor<T> {
    let (height, width, heads, d) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut data = Vec::with_capacity(height * width * d);
    for px in 0..height * width {
        let base = (px * heads + head) * d;
        data.extend_from_slice(&x.data()[base..base + d]);
    }
    Tensor::new(vec![height * width, d], data).expect("consistent flatten")
}
