use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `sum_{i < m} lambda_(i)^2 / (n^2 (m - 1)^2)` over the `m - 1` largest eigenvalues of
/// `sigma`. Tends to zero along a sequence of growing designs when the shuffle
/// estimator is consistent.
pub fn consistency_diagnostic(sigma: &DMatrix<f64>, m: usize, n: usize) -> Result<f64> {
    let t = sigma.nrows();
    if sigma.ncols() != t {
        return Err(Error::DimensionMismatch {
            expected: t,
            actual: sigma.ncols(),
        });
    }
    if m < 2 || n < 1 || m - 1 > t {
        return Err(Error::InvalidParameter(format!(
            "need 2 <= m and m - 1 <= T = {t}, got m = {m}, n = {n}"
        )));
    }
    let mut eig: Vec<f64> = sigma.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let top: f64 = eig[..m - 1].iter().map(|l| l * l).sum();
    let scale = (n * n) as f64 * ((m - 1) * (m - 1)) as f64;
    Ok(top / scale)
}
