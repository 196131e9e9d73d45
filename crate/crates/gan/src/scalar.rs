//! Floating-point element types: `f32` for training, `f64` for gradient checks.

use num_traits::Float;

pub trait Scalar: Float + std::fmt::Debug + Default + Send + Sync + 'static {
    /// `c ← α·op(a)·op(b) + β·c` on row-major buffers, where `op(a)` is
    /// `m×k` and `op(b)` is `k×n`; `ta`/`tb` mean the stored matrix is the
    /// transpose.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], ta: bool, b: &[Self], tb: bool, beta: Self, c: &mut [Self]);

    fn from_f64(x: f64) -> Self;
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(m: usize, k: usize, n: usize, a: &[Self], ta: bool, b: &[Self], tb: bool, beta: Self, c: &mut [Self]) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, ta);
                let (rsb, csb) = strides(k, n, tb);
                // SAFETY: the bounds above cover every element addressed by
                // the row/column strides of all three matrices.
                unsafe {
                    $gemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
                }
            }

            fn from_f64(x: f64) -> Self {
                x as $t
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool) -> Vec<f64> {
        let at = |i: usize, p: usize| if ta { a[p * m + i] } else { a[i * k + p] };
        let bt = |p: usize, j: usize| if tb { b[j * k + p] } else { b[p * n + j] };
        (0..m * n)
            .map(|ij| (0..k).map(|p| at(ij / n, p) * bt(p, ij % n)).sum())
            .collect()
    }

    #[test]
    fn gemm_matches_naive_for_all_transpositions() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        for ta in [false, true] {
            for tb in [false, true] {
                let mut c = vec![1.0; m * n];
                f64::gemm(m, k, n, &a, ta, &b, tb, 1.0, &mut c);
                for (x, y) in c.iter().zip(naive(m, k, n, &a, ta, &b, tb)) {
                    assert!((x - 1.0 - y).abs() < 1e-12);
                }
            }
        }
    }
}
