//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real floating-point scalar: `f32` or `f64`.
///
/// Besides the arithmetic from [`Float`], a scalar knows how to run a strided
/// general matrix product. The default is a plain triple loop; `f32` and `f64`
/// forward to a blocked kernel.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// `c <- a·b` (or `c <- c + a·b` when `accumulate`) for an `m×k` by `k×n`
    /// product, with every operand addressed through explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        c: &mut [Self],
        c_strides: (isize, isize),
        accumulate: bool,
    ) {
        naive_gemm(m, k, n, a, a_strides, b, b_strides, c, c_strides, accumulate)
    }

    /// Lossy conversion from `f64`, used for literals and deserialization.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

#[allow(clippy::too_many_arguments)]
fn naive_gemm<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (isize, isize),
    b: &[T],
    (rsb, csb): (isize, isize),
    c: &mut [T],
    (rsc, csc): (isize, isize),
    accumulate: bool,
) {
    let at = |i: usize, j: usize, rs: isize, cs: isize| (i as isize * rs + j as isize * cs) as usize;
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for p in 0..k {
                acc = acc + a[at(i, p, rsa, csa)] * b[at(p, j, rsb, csb)];
            }
            let slot = &mut c[at(i, j, rsc, csc)];
            *slot = if accumulate { *slot + acc } else { acc };
        }
    }
}

macro_rules! blocked_gemm {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                (rsa, csa): (isize, isize),
                b: &[Self],
                (rsb, csb): (isize, isize),
                c: &mut [Self],
                (rsc, csc): (isize, isize),
                accumulate: bool,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if !accumulate {
                        for i in 0..m {
                            for j in 0..n {
                                c[(i as isize * rsc + j as isize * csc) as usize] = 0.0;
                            }
                        }
                    }
                    return;
                }
                let last = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize
                };
                assert!(last(m, k, rsa, csa) < a.len());
                assert!(last(k, n, rsb, csb) < b.len());
                assert!(last(m, n, rsc, csc) < c.len());
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the asserts above keep every strided access in bounds,
                // and `c` is exclusively borrowed.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
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
                    );
                }
            }
        }
    };
}

blocked_gemm!(f64, matrixmultiply::dgemm);
blocked_gemm!(f32, matrixmultiply::sgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocked_and_naive_kernels_agree() {
        let a: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let mut fast = vec![0.0; 15];
        let mut slow = vec![0.0; 15];
        f64::gemm(3, 4, 5, &a, (4, 1), &b, (5, 1), &mut fast, (5, 1), false);
        naive_gemm(3, 4, 5, &a, (4, 1), &b, (5, 1), &mut slow, (5, 1), false);
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_inner_dimension_zeroes_output() {
        let mut c = vec![7.0f64; 3];
        f64::gemm(1, 0, 3, &[], (0, 1), &[], (3, 1), &mut c, (3, 1), false);
        assert_eq!(c, vec![0.0; 3]);
    }
}
