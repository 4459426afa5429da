//! Gradient verification against central finite differences.

use super::graph::Mat;
use crate::error::{Error, Result};

/// Central finite-difference gradient of a scalar function at `x`.
pub fn fd_grad<F: FnMut(&Mat) -> f64>(mut f: F, x: &Mat, eps: f64) -> Mat {
    let mut grad = Mat::zeros(x.dim());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + eps;
        let plus = f(&probe);
        probe[[r, c]] = orig - eps;
        let minus = f(&probe);
        probe[[r, c]] = orig;
        grad[[r, c]] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// Elementwise relative discrepancy `|a − n| / max(1, |a|, |n|)`, maximized
/// over all entries.
pub fn max_relative_error(analytic: &Mat, numeric: &Mat) -> f64 {
    assert_eq!(analytic.dim(), numeric.dim(), "gradient shape mismatch");
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / 1.0f64.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}

/// Compares an analytic gradient of `f` at `x` against central finite
/// differences and returns the max relative error. `eps` must lie in
/// [1e-6, 1e-3]; non-finite function values are an error.
pub fn gradient_check<F: FnMut(&Mat) -> f64>(
    mut f: F,
    x: &Mat,
    analytic: &Mat,
    eps: f64,
) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Config(format!(
            "finite-difference step {eps} outside [1e-6, 1e-3]"
        )));
    }
    let base = f(x);
    if !base.is_finite() {
        return Err(Error::Numeric(format!("non-finite function value {base}")));
    }
    let numeric = fd_grad(&mut f, x, eps);
    if let Some(v) = numeric.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite finite-difference entry {v}")));
    }
    Ok(max_relative_error(analytic, &numeric))
}
