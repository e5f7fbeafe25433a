//! Dense row-major tensors and the forward kernels shared by the tape.
//!
//! Every kernel here is a pure function of its inputs. Reductions run in a
//! fixed sequential order so results are bitwise reproducible.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point element type. `f32` is used for training and inference,
/// `f64` for oracle comparisons and gradient checks.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn erf(self) -> Self;

    /// `c = alpha * op(a) * op(b) + beta * c` for row-major operands, where
    /// `op` optionally transposes. `a` is `m x k` after `op`, `b` is `k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite cast")
    }
}

macro_rules! impl_scalar {
    ($t:ty, $erf:path, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn erf(self) -> Self {
                $erf(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                // Row-major strides; a transpose is a stride swap.
                let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: bounds asserted above; strides address only elements
                // inside the asserted extents.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, libm::erff, matrixmultiply::sgemm);
impl_scalar!(f64, libm::erf, matrixmultiply::dgemm);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)` of a 2-D tensor; panics on other ranks.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected a 2-D tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn row(&self, i: usize) -> &[T] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs().as_f64())
            .fold(0.0, f64::max)
    }
}

/// Batched matrix product `[.., i, k] x [.., k, j] -> [.., i, j]`. Batch
/// extents broadcast NumPy-style; rank-2 operands are the plain product.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mismatch = || Error::ShapeMismatch {
        op: "matmul",
        left: a.shape.clone(),
        right: b.shape.clone(),
    };
    if a.shape.len() < 2 || b.shape.len() < 2 {
        return Err(mismatch());
    }
    let (ab, am) = a.shape.split_at(a.shape.len() - 2);
    let (bb, bm) = b.shape.split_at(b.shape.len() - 2);
    let (m, k, k2, n) = (am[0], am[1], bm[0], bm[1]);
    if k != k2 {
        return Err(mismatch());
    }
    let batch = broadcast_shape(ab, bb).ok_or_else(mismatch)?;
    let batch_count: usize = batch.iter().product();
    let mut out = vec![T::zero(); batch_count * m * n];
    for bi in 0..batch_count {
        let ai = broadcast_index(bi, &batch, ab);
        let bj = broadcast_index(bi, &batch, bb);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &a.data[ai * m * k..(ai + 1) * m * k],
            false,
            &b.data[bj * k * n..(bj + 1) * k * n],
            false,
            T::zero(),
            &mut out[bi * m * n..(bi + 1) * m * n],
        );
    }
    let mut shape = batch;
    shape.extend([m, n]);
    Tensor::new(shape, out)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize], i: usize| {
        let off = rank - s.len();
        if i < off {
            1
        } else {
            s[i - off]
        }
    };
    (0..rank)
        .map(|i| match (pad(a, i), pad(b, i)) {
            (x, y) if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// Flat index into `src` (broadcast against `full`) for flat index `flat` of `full`.
fn broadcast_index(flat: usize, full: &[usize], src: &[usize]) -> usize {
    let off = full.len() - src.len();
    let mut rem = flat;
    let mut idx = 0;
    let mut stride = 1;
    for d in (0..full.len()).rev() {
        let coord = rem % full[d];
        rem /= full[d];
        if d >= off {
            let extent = src[d - off];
            if extent != 1 {
                idx += coord * stride;
            }
            stride *= extent;
        }
    }
    idx
}

/// Row-wise softmax over the last axis, stabilized by max subtraction.
pub fn softmax_lastdim<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let cols = *x.shape.last().ok_or_else(|| Error::invalid("softmax of a rank-0 tensor"))?;
    if cols == 0 {
        return Err(Error::invalid("softmax over an empty axis"));
    }
    let mut out = x.clone();
    for row in out.data.chunks_mut(cols) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = sum.recip();
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Layer normalization over the last axis: `(x - mean) / sqrt(var + eps) * gamma + beta`
/// with the biased (population) variance.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let cols = *x.shape.last().unwrap_or(&0);
    if gamma.numel() != cols || beta.numel() != cols {
        return Err(Error::ShapeMismatch {
            op: "layer_norm",
            left: x.shape.clone(),
            right: gamma.shape.clone(),
        });
    }
    if eps <= T::zero() {
        return Err(Error::invalid("layer_norm eps must be positive"));
    }
    let mut out = x.clone();
    for row in out.data.chunks_mut(cols) {
        let (mean, inv_std) = row_moments(row, eps);
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv_std * gamma.data[j] + beta.data[j];
        }
    }
    Ok(out)
}

pub(crate) fn row_moments<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let n = T::lit(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, (var + eps).sqrt().recip())
}

/// Exact GELU, `x * Phi(x)` with the Gaussian CDF written via `erf`.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

#[inline]
pub(crate) fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    x * half * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// d/dx of the exact GELU: `Phi(x) + x * phi(x)`.
#[inline]
pub(crate) fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let cdf = half * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::lit(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}
