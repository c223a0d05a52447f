//! Blocked row-major matrix multiply used by conv2d and linear layers.

use rayon::prelude::*;

use super::Scalar;

// Panel sizes keep the streamed B rows and the C row segment in cache.
const KC: usize = 256;
const NC: usize = 1024;

/// C (m×n) += A (m×k) × B (k×n), all row-major.
///
/// Rows of C are computed independently (rayon over row chunks), so results
/// are bitwise-deterministic for any thread count.
pub fn gemm_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);

    let serial = m * k * n < 32 * 32 * 32;
    let row_job = |i: usize, crow: &mut [T]| {
        let arow = &a[i * k..(i + 1) * k];
        for pc in (0..k).step_by(KC) {
            let pe = (pc + KC).min(k);
            for jc in (0..n).step_by(NC) {
                let je = (jc + NC).min(n);
                for p in pc..pe {
                    let aip = arow[p];
                    if aip == T::zero() {
                        continue;
                    }
                    let brow = &b[p * n + jc..p * n + je];
                    let crow = &mut crow[jc..je];
                    for (cv, bv) in crow.iter_mut().zip(brow.iter()) {
                        *cv += aip * *bv;
                    }
                }
            }
        }
    };

    if serial {
        for (i, crow) in c.chunks_mut(n).enumerate() {
            row_job(i, crow);
        }
    } else {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, crow)| row_job(i, crow));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn matches_naive_reference() {
        let (m, k, n) = (7, 13, 19);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm_acc(m, k, n, &a, &b, &mut c);
        let want = naive(m, k, n, &a, &b);
        for (x, y) in c.iter().zip(want.iter()) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn accumulates_into_existing_c() {
        let a = [1.0f32, 2.0];
        let b = [3.0f32, 4.0];
        let mut c = [10.0f32, 10.0, 10.0, 10.0];
        // 2x1 times 1x2
        gemm_acc(2, 1, 2, &a, &b, &mut c);
        assert_eq!(c, [13.0, 14.0, 16.0, 18.0]);
    }
}
