//! Dense row-major tensors and the neural-network primitives the rest of
//! the crate composes: matmul, softmax, layer norm, GELU, 2-D convolution
//! and pooling.
//!
//! All kernels are generic over `f32`/`f64`, pure, and bitwise
//! deterministic: parallelism only ever splits *output* elements across
//! workers, and the reduction feeding any single output element runs in a
//! fixed sequential order.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Element type code, matching the NTSR/NATW on-disk dtype byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::F32),
            1 => Some(Self::F64),
            _ => None,
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

/// Scalar element of a [`Tensor`]. Implemented for `f32` and `f64` only.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + PartialOrd
    + PartialEq
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::iter::Sum
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    const DTYPE: Dtype;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    /// `e^x` via libm so results do not depend on the platform's libc.
    fn exp(self) -> Self;
    fn is_finite(self) -> bool;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const DTYPE: Dtype = Dtype::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn abs(self) -> Self {
        self.abs()
    }
    fn sqrt(self) -> Self {
        self.sqrt()
    }
    fn exp(self) -> Self {
        libm::expf(self)
    }
    fn is_finite(self) -> bool {
        self.is_finite()
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte f32"))
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const DTYPE: Dtype = Dtype::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        self.abs()
    }
    fn sqrt(self) -> Self {
        self.sqrt()
    }
    fn exp(self) -> Self {
        libm::exp(self)
    }
    fn is_finite(self) -> bool {
        self.is_finite()
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte f64"))
    }
}

/// Dense row-major tensor: `shape` holds the extents, `data` the contiguous
/// buffer with the last axis stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel = checked_numel(&shape)?;
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {shape:?} implies {numel} elements, buffer holds {}",
                    data.len()
                ),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel = checked_numel(&shape)?;
        Ok(Self {
            shape,
            data: vec![T::ZERO; numel],
        })
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Result<Self> {
        let numel = checked_numel(&shape)?;
        Ok(Self {
            shape,
            data: vec![value; numel],
        })
    }

    /// Standard-normal fill, drawn in row-major order so the stream is
    /// identical for both precisions given the same seed.
    pub fn random_normal(shape: Vec<usize>, rng: &mut Rng) -> Result<Self> {
        let numel = checked_numel(&shape)?;
        let data = (0..numel).map(|_| T::from_f64(rng.normal())).collect();
        Ok(Self { shape, data })
    }

    pub fn random_uniform(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut Rng) -> Result<Self> {
        let numel = checked_numel(&shape)?;
        let data = (0..numel)
            .map(|_| T::from_f64(rng.uniform_in(lo, hi)))
            .collect();
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for axis in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * self.shape[axis + 1];
        }
        strides
    }

    /// Element lookup by multi-index. Convenience for tests and small
    /// paths; hot kernels index the raw buffer directly.
    pub fn at(&self, index: &[usize]) -> T {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut offset = 0;
        for (axis, &i) in index.iter().enumerate() {
            debug_assert!(i < self.shape[axis]);
            offset = offset * self.shape[axis] + i;
        }
        self.data[offset]
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel = checked_numel(&shape)?;
        if numel != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!(
                    "cannot view {} elements as {shape:?} ({numel} elements)",
                    self.data.len()
                ),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T + Sync + Send) -> Self {
        let data = if self.data.len() >= PAR_MIN {
            self.data.par_iter().map(|&x| f(x)).collect()
        } else {
            self.data.iter().map(|&x| f(x)).collect()
        };
        Self {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest elementwise |a - b| between same-shaped tensors.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("tensor", "rank must be at least 1".to_string()));
    }
    let mut numel = 1usize;
    for &extent in shape {
        if extent == 0 {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} has a zero extent"),
            ));
        }
        numel = numel.checked_mul(extent).ok_or_else(|| {
            Error::shape("tensor", format!("shape {shape:?} overflows element count"))
        })?;
    }
    Ok(numel)
}

/// Below this many output elements the sequential path is used; rayon's
/// spawn overhead dominates for tiny kernels.
const PAR_MIN: usize = 4096;

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// `c[m,n] = sum_k a[m,k] * b[k,n]`.
///
/// `a` may carry extra leading axes, which are treated as a batch: every
/// trailing `[M, K]` slice is multiplied by the same `b` (when `b` is rank
/// 2) or by the matching `[K, N]` slice (when `a` and `b` share leading
/// extents). The reduction over `k` is sequential per output element.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() < 2 || b.rank() < 2 {
        return Err(Error::shape(
            "matmul",
            format!(
                "operands must have rank >= 2: lhs {:?}, rhs {:?}",
                a.shape(),
                b.shape()
            ),
        ));
    }
    let (m, k) = (a.shape()[a.rank() - 2], a.shape()[a.rank() - 1]);
    let (kb, n) = (b.shape()[b.rank() - 2], b.shape()[b.rank() - 1]);
    if k != kb {
        return Err(Error::shape(
            "matmul",
            format!(
                "inner extents disagree: lhs {:?}, rhs {:?}",
                a.shape(),
                b.shape()
            ),
        ));
    }

    let batch: usize = a.shape()[..a.rank() - 2].iter().product();
    let shared_b = if b.rank() == 2 {
        true
    } else if a.shape()[..a.rank() - 2] == b.shape()[..b.rank() - 2] {
        false
    } else {
        return Err(Error::shape(
            "matmul",
            format!(
                "batch extents disagree: lhs {:?}, rhs {:?}",
                a.shape(),
                b.shape()
            ),
        ));
    };

    let mut out_shape = a.shape()[..a.rank() - 2].to_vec();
    out_shape.push(m);
    out_shape.push(n);
    let mut out = Tensor::zeros(out_shape)?;

    let a_data = a.data();
    let b_data = b.data();
    let rows = batch * m;
    let fill_row = |row: usize, out_row: &mut [T]| {
        let (batch_idx, i) = (row / m, row % m);
        let a_row = &a_data[(batch_idx * m + i) * k..(batch_idx * m + i) * k + k];
        let b_mat = if shared_b {
            &b_data[..k * n]
        } else {
            &b_data[batch_idx * k * n..(batch_idx + 1) * k * n]
        };
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b_mat[kk * n..kk * n + n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };

    if rows * n >= PAR_MIN && rows > 1 {
        out.data_mut()
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(row, out_row)| fill_row(row, out_row));
    } else {
        for (row, out_row) in out.data_mut().chunks_mut(n).enumerate() {
            fill_row(row, out_row);
        }
    }
    Ok(out)
}

/// Affine map over the last axis: `y = x W + b` with `x: [..., C_in]`,
/// `w: [C_in, C_out]`, `b: [C_out]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if w.rank() != 2 || b.rank() != 1 || b.shape()[0] != w.shape()[1] {
        return Err(Error::shape(
            "linear",
            format!(
                "weight {:?} and bias {:?} are inconsistent",
                w.shape(),
                b.shape()
            ),
        ));
    }
    let c_in = w.shape()[0];
    if *x.shape().last().unwrap() != c_in {
        return Err(Error::shape(
            "linear",
            format!("input {:?} does not end in {c_in}", x.shape()),
        ));
    }
    let rows = x.numel() / c_in;
    let flat = x.clone().reshape(vec![rows, c_in])?;
    let mut y = matmul(&flat, w)?;
    let c_out = w.shape()[1];
    let b_data = b.data();
    for row in y.data_mut().chunks_mut(c_out) {
        for (o, &bv) in row.iter_mut().zip(b_data) {
            *o += bv;
        }
    }
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = c_out;
    y.reshape(out_shape)
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

/// Softmax over the last axis with max-subtraction for stability. Each
/// last-axis slice of the output is nonnegative and sums to 1.
pub fn softmax_last<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if !x.all_finite() {
        return Err(Error::Numeric(
            "softmax_last: input contains non-finite values".to_string(),
        ));
    }
    let width = *x.shape().last().unwrap();
    let mut out = x.clone();
    let normalize = |slice: &mut [T]| {
        let mut max = slice[0];
        for &v in slice.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::ZERO;
        for v in slice.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in slice.iter_mut() {
            *v = *v / sum;
        }
    };
    if x.numel() >= PAR_MIN && x.numel() / width > 1 {
        out.data_mut().par_chunks_mut(width).for_each(normalize);
    } else {
        out.data_mut().chunks_mut(width).for_each(normalize);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// layer norm
// ---------------------------------------------------------------------------

/// Default normalization epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-slice normalization over the last axis followed by the affine map
/// `gamma * x_hat + beta`. Variance uses the population convention
/// (divide by C). Statistics accumulate in f64 regardless of `T`.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let c = *x.shape().last().unwrap();
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "layer_norm",
            format!(
                "input {:?} needs gamma/beta of shape [{c}], got {:?} / {:?}",
                x.shape(),
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    if eps < 0.0 {
        return Err(Error::Config(format!("layer_norm eps must be >= 0, got {eps}")));
    }
    let mut out = x.clone();
    let g = gamma.data();
    let b = beta.data();
    let normalize = |slice: &mut [T]| {
        let mut mean = 0.0f64;
        for &v in slice.iter() {
            mean += v.to_f64();
        }
        mean /= c as f64;
        let mut var = 0.0f64;
        for &v in slice.iter() {
            let d = v.to_f64() - mean;
            var += d * d;
        }
        var /= c as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        for (i, v) in slice.iter_mut().enumerate() {
            let normed = (v.to_f64() - mean) * inv_std;
            *v = T::from_f64(normed) * g[i] + b[i];
        }
    };
    if x.numel() >= PAR_MIN && x.numel() / c > 1 {
        out.data_mut().par_chunks_mut(c).for_each(normalize);
    } else {
        out.data_mut().chunks_mut(c).for_each(normalize);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// gelu
// ---------------------------------------------------------------------------

/// Elementwise `x * Phi(x)` with the exact Gaussian CDF (erf form), not the
/// tanh approximation. Evaluated in f64 internally.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        let v64 = v.to_f64();
        T::from_f64(0.5 * v64 * (1.0 + libm::erf(v64 * std::f64::consts::FRAC_1_SQRT_2)))
    })
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

/// 2-D cross-correlation (no kernel flip) with zero padding.
///
/// `x: [H, W, C_in]`, `w: [k, k, C_in, C_out]`, `b: [C_out]`. The
/// reduction per output element runs in fixed `(ki, kj, c_in)` order.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    if x.rank() != 3 || w.rank() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("expected x [H,W,Cin] and w [k,k,Cin,Cout], got {:?} and {:?}", x.shape(), w.shape()),
        ));
    }
    let (h, width, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (k, k2, w_cin, c_out) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    if k != k2 || k % 2 == 0 {
        return Err(Error::Config(format!("conv2d kernel must be square and odd, got {k}x{k2}")));
    }
    if w_cin != c_in || b.shape() != [c_out] {
        return Err(Error::shape(
            "conv2d",
            format!(
                "x {:?} vs w {:?} / b {:?}: channel extents disagree",
                x.shape(),
                w.shape(),
                b.shape()
            ),
        ));
    }
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be positive".to_string()));
    }
    let out_h = (h + 2 * pad).checked_sub(k).map(|v| v / stride + 1);
    let out_w = (width + 2 * pad).checked_sub(k).map(|v| v / stride + 1);
    let (out_h, out_w) = match (out_h, out_w) {
        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => (oh, ow),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {k} with stride {stride}, pad {pad} produces empty output from {h}x{width}"),
            ))
        }
    };

    let mut out = Tensor::zeros(vec![out_h, out_w, c_out])?;
    let x_data = x.data();
    let w_data = w.data();
    let b_data = b.data();
    let row_len = out_w * c_out;

    let fill_row = |oi: usize, out_row: &mut [T]| {
        for oj in 0..out_w {
            let acc = &mut out_row[oj * c_out..(oj + 1) * c_out];
            acc.copy_from_slice(b_data);
            for ki in 0..k {
                let ii = (oi * stride + ki) as isize - pad as isize;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for kj in 0..k {
                    let jj = (oj * stride + kj) as isize - pad as isize;
                    if jj < 0 || jj >= width as isize {
                        continue;
                    }
                    let x_px = &x_data[(ii as usize * width + jj as usize) * c_in..][..c_in];
                    let w_base = ((ki * k) + kj) * c_in * c_out;
                    for (ci, &xv) in x_px.iter().enumerate() {
                        let w_row = &w_data[w_base + ci * c_out..][..c_out];
                        for (o, &wv) in acc.iter_mut().zip(w_row) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
    };

    if out.numel() >= PAR_MIN && out_h > 1 {
        out.data_mut()
            .par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(oi, row)| fill_row(oi, row));
    } else {
        for (oi, row) in out.data_mut().chunks_mut(row_len).enumerate() {
            fill_row(oi, row);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

/// Mean over the spatial axes of an `[H, W, C]` map, yielding `[C]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::shape(
            "global_avg_pool",
            format!("expected [H,W,C], got {:?}", x.shape()),
        ));
    }
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut acc = vec![T::ZERO; c];
    for px in x.data().chunks(c) {
        for (a, &v) in acc.iter_mut().zip(px) {
            *a += v;
        }
    }
    let inv = T::from_f64(1.0 / (h * w) as f64);
    Tensor::new(vec![c], acc.into_iter().map(|v| v * inv).collect())
}

/// Elementwise sum of two same-shaped tensors.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "add",
            format!("shapes disagree: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn tensor2<T: Scalar>(rows: &[&[f64]]) -> Tensor<T> {
        let shape = vec![rows.len(), rows[0].len()];
        let data = rows
            .iter()
            .flat_map(|r| r.iter().map(|&v| T::from_f64(v)))
            .collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = tensor2::<f64>(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let m = tensor2::<f64>(&[&[3.0, 4.0], &[5.0, 6.0]]);
        let prod = matmul(&eye, &m).unwrap();
        assert_eq!(prod, m);
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let a = tensor2::<f64>(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = tensor2::<f64>(&[&[5.0], &[7.0]]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[19.0, 43.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = Rng::new(11);
        let a = Tensor::<f64>::random_normal(vec![7, 5], &mut rng).unwrap();
        let b = Tensor::<f64>::random_normal(vec![5, 3], &mut rng).unwrap();
        let c = matmul(&a, &b).unwrap();
        // Independent naive triple loop.
        for m in 0..7 {
            for n in 0..3 {
                let mut acc = 0.0;
                for k in 0..5 {
                    acc += a.at(&[m, k]) * b.at(&[k, n]);
                }
                let got = c.at(&[m, n]);
                let rel = (got - acc).abs() / acc.abs().max(1e-12);
                assert!(rel <= 1e-6, "({m},{n}): {got} vs {acc}");
            }
        }
    }

    #[test]
    fn matmul_batched_matches_per_slice() {
        let mut rng = Rng::new(5);
        let a = Tensor::<f64>::random_normal(vec![4, 3, 6], &mut rng).unwrap();
        let b = Tensor::<f64>::random_normal(vec![6, 2], &mut rng).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[4, 3, 2]);
        for batch in 0..4 {
            let slice = Tensor::new(
                vec![3, 6],
                a.data()[batch * 18..(batch + 1) * 18].to_vec(),
            )
            .unwrap();
            let expect = matmul(&slice, &b).unwrap();
            for i in 0..3 {
                for j in 0..2 {
                    assert_eq!(c.at(&[batch, i, j]), expect.at(&[i, j]));
                }
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::<f32>::zeros(vec![2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(vec![4, 2]).unwrap();
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn softmax_symmetry_and_shift_invariance() {
        let x = Tensor::<f64>::new(vec![2], vec![0.0, 0.0]).unwrap();
        let y = softmax_last(&x).unwrap();
        assert!((y.data()[0] - 0.5).abs() < 1e-12);
        assert!((y.data()[1] - 0.5).abs() < 1e-12);

        let mut rng = Rng::new(2);
        let x = Tensor::<f64>::random_normal(vec![9], &mut rng).unwrap();
        let shifted = x.map(|v| v + 1000.0);
        let a = softmax_last(&x).unwrap();
        let b = softmax_last(&shifted).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-6);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let x = Tensor::<f32>::new(vec![2], vec![f32::NAN, 0.0]).unwrap();
        assert!(matches!(softmax_last(&x), Err(Error::Numeric(_))));
        let x = Tensor::<f32>::new(vec![2], vec![f32::INFINITY, 0.0]).unwrap();
        assert!(matches!(softmax_last(&x), Err(Error::Numeric(_))));
    }

    proptest! {
        #[test]
        fn softmax_slices_are_distributions(values in proptest::collection::vec(-50.0f64..50.0, 1..64)) {
            let x = Tensor::<f64>::new(vec![values.len()], values).unwrap();
            let y = softmax_last(&x).unwrap();
            let sum: f64 = y.data().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn layer_norm_constant_slice() {
        let x = Tensor::<f64>::filled(vec![2, 4], 3.5).unwrap();
        let gamma = Tensor::filled(vec![4], 1.0).unwrap();
        let beta = Tensor::zeros(vec![4]).unwrap();
        let y = layer_norm(&x, &gamma, &beta, LAYER_NORM_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let beta = Tensor::filled(vec![4], 2.25).unwrap();
        let y = layer_norm(&x, &gamma, &beta, LAYER_NORM_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.25));
    }

    #[test]
    fn layer_norm_matches_direct_computation() {
        // eps = 0 so the oracle is exact: mean 2.5, population var 1.25.
        let x = Tensor::<f64>::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let gamma = Tensor::filled(vec![4], 1.0).unwrap();
        let beta = Tensor::zeros(vec![4]).unwrap();
        let y = layer_norm(&x, &gamma, &beta, 0.0).unwrap();
        let std = 1.25f64.sqrt();
        for (i, &v) in y.data().iter().enumerate() {
            let expect = ((i + 1) as f64 - 2.5) / std;
            assert!((v - expect).abs() <= 1e-12, "{v} vs {expect}");
        }
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let mut rng = Rng::new(77);
        let x = Tensor::<f64>::random_normal(vec![6, 32], &mut rng).unwrap();
        let gamma = Tensor::filled(vec![32], 1.0).unwrap();
        let beta = Tensor::zeros(vec![32]).unwrap();
        let y = layer_norm(&x, &gamma, &beta, 1e-10).unwrap();
        for slice in y.data().chunks(32) {
            let mean: f64 = slice.iter().sum::<f64>() / 32.0;
            let var: f64 = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 32.0;
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn gelu_fixed_points() {
        let x = Tensor::<f64>::new(vec![3], vec![0.0, 10.0, 1.0]).unwrap();
        let y = gelu(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 10.0).abs() <= 1e-6);
        // Independent oracle: erf(1/sqrt(2)) via its Maclaurin series,
        // erf(z) = 2/sqrt(pi) * sum_n (-1)^n z^(2n+1) / (n! (2n+1)).
        let z = 1.0 / 2.0f64.sqrt();
        let mut term = z;
        let mut series = 0.0;
        for n in 0..30 {
            series += term / (2 * n + 1) as f64;
            term *= -z * z / (n + 1) as f64;
        }
        let erf1 = 2.0 / std::f64::consts::PI.sqrt() * series;
        let expect = 0.5 * (1.0 + erf1);
        assert!((y.data()[2] - expect).abs() <= 1e-7, "{} vs {expect}", y.data()[2]);
    }

    #[test]
    fn conv2d_pointwise_identity() {
        let mut rng = Rng::new(4);
        let x = Tensor::<f64>::random_normal(vec![5, 6, 3], &mut rng).unwrap();
        // 1x1 kernel carrying the identity channel map.
        let mut w = Tensor::zeros(vec![1, 1, 3, 3]).unwrap();
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let b = Tensor::zeros(vec![3]).unwrap();
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv2d_stride2_shape() {
        let x = Tensor::<f32>::zeros(vec![224, 224, 3]).unwrap();
        let w = Tensor::zeros(vec![3, 3, 3, 8]).unwrap();
        let b = Tensor::zeros(vec![8]).unwrap();
        let y = conv2d(&x, &w, &b, 2, 1).unwrap();
        assert_eq!(y.shape(), &[112, 112, 8]);
    }

    #[test]
    fn conv2d_matches_nested_loop_oracle() {
        let mut rng = Rng::new(21);
        let x = Tensor::<f64>::random_normal(vec![9, 9, 4], &mut rng).unwrap();
        let w = Tensor::<f64>::random_normal(vec![3, 3, 4, 5], &mut rng).unwrap();
        let b = Tensor::<f64>::random_normal(vec![5], &mut rng).unwrap();
        for (stride, pad) in [(1usize, 1usize), (2, 1), (1, 0)] {
            let y = conv2d(&x, &w, &b, stride, pad).unwrap();
            let (oh, ow) = (y.shape()[0], y.shape()[1]);
            // Direct six-nested-loop evaluation.
            for oi in 0..oh {
                for oj in 0..ow {
                    for co in 0..5 {
                        let mut acc = b.at(&[co]);
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let ii = (oi * stride + ki) as isize - pad as isize;
                                let jj = (oj * stride + kj) as isize - pad as isize;
                                if ii < 0 || jj < 0 || ii >= 9 || jj >= 9 {
                                    continue;
                                }
                                for ci in 0..4 {
                                    acc += x.at(&[ii as usize, jj as usize, ci])
                                        * w.at(&[ki, kj, ci, co]);
                                }
                            }
                        }
                        let got = y.at(&[oi, oj, co]);
                        let rel = (got - acc).abs() / acc.abs().max(1e-12);
                        assert!(rel <= 1e-6, "stride {stride} pad {pad} ({oi},{oj},{co})");
                    }
                }
            }
        }
    }

    #[test]
    fn conv2d_rejects_empty_output_and_even_kernel() {
        let x = Tensor::<f32>::zeros(vec![2, 2, 1]).unwrap();
        let w = Tensor::<f32>::zeros(vec![5, 5, 1, 1]).unwrap();
        let b = Tensor::<f32>::zeros(vec![1]).unwrap();
        assert!(conv2d(&x, &w, &b, 1, 0).is_err());
        let w = Tensor::<f32>::zeros(vec![2, 2, 1, 1]).unwrap();
        assert!(matches!(conv2d(&x, &w, &b, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn global_avg_pool_examples() {
        let x = Tensor::<f64>::filled(vec![4, 3, 2], 2.5).unwrap();
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.data(), &[2.5, 2.5]);

        let mut rng = Rng::new(1);
        let x = Tensor::<f64>::random_normal(vec![1, 1, 6], &mut rng).unwrap();
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.data(), x.data());

        let x = Tensor::<f64>::random_normal(vec![3, 3, 2], &mut rng).unwrap();
        let y = global_avg_pool(&x).unwrap();
        for c in 0..2 {
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    acc += x.at(&[i, j, c]);
                }
            }
            assert!((y.at(&[c]) - acc / 9.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let mut rng = Rng::new(123);
        let a = Tensor::<f32>::random_normal(vec![64, 48], &mut rng).unwrap();
        let b = Tensor::<f32>::random_normal(vec![48, 32], &mut rng).unwrap();
        let x = Tensor::<f32>::random_normal(vec![20, 20, 8], &mut rng).unwrap();
        let w = Tensor::<f32>::random_normal(vec![3, 3, 8, 8], &mut rng).unwrap();
        let bias = Tensor::<f32>::random_normal(vec![8], &mut rng).unwrap();

        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                (
                    matmul(&a, &b).unwrap(),
                    conv2d(&x, &w, &bias, 1, 1).unwrap(),
                    softmax_last(&a).unwrap(),
                )
            })
        };
        let (m1, c1, s1) = run(1);
        let (m4, c4, s4) = run(4);
        assert_eq!(m1.data(), m4.data());
        assert_eq!(c1.data(), c4.data());
        assert_eq!(s1.data(), s4.data());
    }

    #[test]
    fn tensor_invariants_rejected() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::zeros(vec![]).is_err());
        assert!(Tensor::<f32>::zeros(vec![2, 0]).is_err());
    }
}
