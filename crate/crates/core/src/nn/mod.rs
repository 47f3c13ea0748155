//! Small CPU tensor library with explicit per-layer backward passes.
//!
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks. All
//! reductions run in a fixed order, so results are bit-reproducible.

mod batchnorm;
mod conv;
mod ops;
mod tensor;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

pub use batchnorm::{batch_norm, batch_norm_eval, batch_norm_grad, BnCache, BnGrads, BnMode, BnParams};
pub use conv::{conv2d, conv2d_grad, conv2d_grad_params, ConvGrads, ConvParams};
pub use ops::{
    fully_connected, fully_connected_grad, global_avg_pool, global_avg_pool_grad, relu, relu_grad,
    softmax, softmax_cross_entropy, FcGrads,
};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid grouping: {0}")]
    Groups(String),
    #[error("batch norm in training mode needs at least 2 values per channel, got {0}")]
    BatchTooSmall(usize),
    #[error("label {label} at row {row} is not a valid class")]
    BadLabel { row: usize, label: usize },
}

/// Floating-point element type for tensors.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    /// `c = alpha * a * b + beta * c` on strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

fn check_gemm<T>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &[T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm buffers too small");
}

impl Real for f32 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
        csc: isize,
    ) {
        check_gemm(m, k, n, a, b, c);
        // SAFETY: buffer sizes are checked above and all callers pass dense
        // row-major or transposed strides within those sizes.
        unsafe {
            matrixmultiply::sgemm(
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
                rsc,
                csc,
            )
        }
    }
}

impl Real for f64 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
        csc: isize,
    ) {
        check_gemm(m, k, n, a, b, c);
        // SAFETY: see the f32 implementation.
        unsafe {
            matrixmultiply::dgemm(
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
                rsc,
                csc,
            )
        }
    }
}

/// Row-major `c (m x n) = op(a) * op(b) (+ c if accumulate)`, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
    c: &mut [T],
    accumulate: bool,
) {
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_transpose_flags() {
        // a = [[1,2,3],[4,5,6]] (2x3), b = [[1,0],[0,1],[1,1]] (3x2)
        let a = [1.0f64, 2., 3., 4., 5., 6.];
        let b = [1.0f64, 0., 0., 1., 1., 1.];
        let mut c = [0.0; 4];
        matmul(2, 3, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [4., 5., 10., 11.]);
        // a^T stored (3x2) -> same product
        let at = [1.0f64, 4., 2., 5., 3., 6.];
        let bt = [1.0f64, 0., 1., 0., 1., 1.];
        let mut d = [1.0; 4];
        matmul(2, 3, 2, &at, true, &bt, true, &mut d, true);
        assert_eq!(d, [5., 6., 11., 12.]);
    }
}
