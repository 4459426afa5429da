//! Dense linear-algebra kernels: Householder QR with a fixed sign convention,
//! triangular solves, and log-determinants built on them.

use ndarray::Array2;

use super::graph::Mat;

/// QR factorization of a square matrix by Householder reflections.
///
/// Returns `(q, r)` with `q` orthogonal, `r` upper triangular, and
/// `diag(r) ≥ 0`. The non-negative-diagonal convention makes the
/// factorization of a nonsingular matrix unique, which keeps
/// orthogonal-from-unconstrained parameterizations deterministic.
pub fn qr(a: &Mat) -> (Mat, Mat) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "qr expects a square matrix, got {}x{}", n, a.ncols());
    let mut r = a.clone();
    let mut q = Array2::<f64>::eye(n);
    let mut v = vec![0.0f64; n];
    for k in 0..n {
        let norm = (k..n).map(|i| r[[i, k]] * r[[i, k]]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let sign = if r[[k, k]] >= 0.0 { 1.0 } else { -1.0 };
        let alpha = -sign * norm;
        for i in k..n {
            v[i] = r[[i, k]];
        }
        v[k] -= alpha;
        let vtv: f64 = (k..n).map(|i| v[i] * v[i]).sum();
        if vtv == 0.0 {
            continue;
        }
        // R ← H·R with H = I − 2vvᵀ/vᵀv, restricted to the active block.
        for j in k..n {
            let dot: f64 = (k..n).map(|i| v[i] * r[[i, j]]).sum();
            let f = 2.0 * dot / vtv;
            for i in k..n {
                r[[i, j]] -= f * v[i];
            }
        }
        // Q ← Q·H (accumulating the product of reflections).
        for i in 0..n {
            let dot: f64 = (k..n).map(|j| q[[i, j]] * v[j]).sum();
            let f = 2.0 * dot / vtv;
            for j in k..n {
                q[[i, j]] -= f * v[j];
            }
        }
    }
    // The sub-diagonal of R is zero by construction up to roundoff; make it
    // exact, then normalize signs so the diagonal is non-negative.
    for i in 0..n {
        for j in 0..i {
            r[[i, j]] = 0.0;
        }
    }
    for i in 0..n {
        if r[[i, i] ] < 0.0 {
            for j in i..n {
                r[[i, j]] = -r[[i, j]];
            }
            for row in 0..n {
                q[[row, i]] = -q[[row, i]];
            }
        }
    }
    (q, r)
}

/// Solves `R·X = B` for upper-triangular `R` by back substitution.
/// Panics if a diagonal entry is exactly zero (singular system).
pub fn solve_upper(r: &Mat, b: &Mat) -> Mat {
    let n = r.nrows();
    assert_eq!(n, r.ncols(), "solve_upper expects square R");
    assert_eq!(n, b.nrows(), "solve_upper shape mismatch");
    let m = b.ncols();
    let mut x = Array2::<f64>::zeros((n, m));
    for col in 0..m {
        for i in (0..n).rev() {
            let mut s = b[[i, col]];
            for j in i + 1..n {
                s -= r[[i, j]] * x[[j, col]];
            }
            assert!(r[[i, i]] != 0.0, "singular triangular system");
            x[[i, col]] = s / r[[i, i]];
        }
    }
    x
}

/// `ln |det A|` of a square matrix via its QR factorization
/// (the orthogonal factor has unit |det|). Returns −∞ for singular input.
pub fn log_abs_det(a: &Mat) -> f64 {
    let (_, r) = qr(a);
    (0..r.nrows()).map(|i| r[[i, i]].abs().ln()).sum()
}
