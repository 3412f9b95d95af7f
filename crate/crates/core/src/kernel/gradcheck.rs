//! Central-difference verification of analytic gradients.

use super::KernelError;

/// Compares an analytic gradient against central finite differences of `f`
/// around `point`, returning the maximum relative error
/// `|analytic - numeric| / (|analytic| + |numeric| + eps)`.
///
/// Fails with [`KernelError::NonFiniteValue`] when any probe of `f` or any
/// gradient entry is not finite, and with a dimension error when the
/// gradient length does not match the point.
pub fn grad_check(
    f: impl Fn(&[f64]) -> f64,
    analytic: &[f64],
    point: &[f64],
    step: f64,
) -> Result<f64, KernelError> {
    const EPS: f64 = 1e-12;
    if analytic.len() != point.len() {
        return Err(KernelError::DimensionMismatch {
            op: "grad_check",
            detail: format!("gradient has {} entries, point has {}", analytic.len(), point.len()),
        });
    }
    if point.is_empty() {
        return Err(KernelError::EmptyInput("grad_check"));
    }
    let mut work = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        if !analytic[i].is_finite() {
            return Err(KernelError::NonFiniteValue("grad_check analytic gradient"));
        }
        work[i] = point[i] + step;
        let up = f(&work);
        work[i] = point[i] - step;
        let down = f(&work);
        work[i] = point[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(KernelError::NonFiniteValue("grad_check function probe"));
        }
        let numeric = (up - down) / (2.0 * step);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs() + EPS);
        worst = worst.max(rel);
    }
    Ok(worst)
}
