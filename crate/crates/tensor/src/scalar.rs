//! Floating-point element types supported by the tape.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of a [`Tensor`](crate::Tensor).
///
/// Implemented for `f32` (training) and `f64` (gradient verification).
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
    + DivAssign
    + 'static
{
    const NAME: &'static str;

    /// `c = alpha * a @ b + beta * c` over strided row-major views.
    ///
    /// # Safety
    /// All pointers must be valid for the element ranges implied by the
    /// dimensions and strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A strided 2-D view into a slice, used to describe gemm operands.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MatView {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl MatView {
    pub fn row_major(offset: usize, rows: usize, cols: usize) -> Self {
        MatView {
            offset,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Same storage viewed as its transpose.
    pub fn t(self) -> Self {
        MatView {
            offset: self.offset,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    pub fn with_stride(offset: usize, rows: usize, cols: usize, row_stride: usize) -> Self {
        MatView {
            offset,
            rows,
            cols,
            row_stride,
            col_stride: 1,
        }
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return self.offset;
        }
        self.offset + (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
    }
}

/// Bounds-checked gemm: `c = alpha * a @ b + beta * c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    alpha: T,
    a: &[T],
    av: MatView,
    b: &[T],
    bv: MatView,
    beta: T,
    c: &mut [T],
    cv: MatView,
) {
    assert_eq!(av.cols, bv.rows, "gemm inner dimension");
    assert_eq!(av.rows, cv.rows, "gemm output rows");
    assert_eq!(bv.cols, cv.cols, "gemm output cols");
    let (m, k, n) = (av.rows, av.cols, bv.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = cv.offset + i * cv.row_stride + j * cv.col_stride;
                c[idx] = if beta == T::zero() {
                    T::zero()
                } else {
                    beta * c[idx]
                };
            }
        }
        return;
    }
    assert!(av.last_index() < a.len(), "gemm lhs out of bounds");
    assert!(bv.last_index() < b.len(), "gemm rhs out of bounds");
    assert!(cv.last_index() < c.len(), "gemm output out of bounds");
    // SAFETY: every index touched lies within the checked view bounds.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.offset),
            av.row_stride as isize,
            av.col_stride as isize,
            b.as_ptr().add(bv.offset),
            bv.row_stride as isize,
            bv.col_stride as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.row_stride as isize,
            cv.col_stride as isize,
        );
    }
}
