use super::TensorError;

/// `|a - n| / max(1e-12, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Central-difference gradient of `f` at `point`.
pub fn numeric_gradient<F>(mut f: F, point: &[f64], eps: f64) -> Result<Vec<f64>, TensorError>
where
    F: FnMut(&[f64]) -> Result<f64, TensorError>,
{
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x)?;
        x[i] = orig - eps;
        let minus = f(&x)?;
        x[i] = orig;
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Compares `analytic` against central differences of `f` and returns the
/// largest per-coordinate relative error.
pub fn finite_diff_check<F>(f: F, point: &[f64], analytic: &[f64], eps: f64) -> Result<f64, TensorError>
where
    F: FnMut(&[f64]) -> Result<f64, TensorError>,
{
    if point.len() != analytic.len() {
        return Err(TensorError::Shape {
            op: "finite_diff_check",
            detail: format!("{} coordinates but {} analytic entries", point.len(), analytic.len()),
        });
    }
    let numeric = numeric_gradient(f, point, eps)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient() {
        let f = |x: &[f64]| Ok(x[0].powi(3) + 2.0 * x[1]);
        let err = finite_diff_check(f, &[1.5, -2.0], &[3.0 * 1.5 * 1.5, 2.0], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 3.0) - 0.5).abs() < 1e-15);
    }
}
