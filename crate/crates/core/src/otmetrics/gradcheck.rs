/// Outcome of a central-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the analytic gradient returned by `f` with central differences.
///
/// The per-coordinate error is `|g − ĝ| / max(|g|, |ĝ|, abs_floor)`, so coordinates
/// whose gradient is (near) zero fall back to an absolute tolerance of `abs_floor`.
pub fn grad_check<F>(f: F, point: &[f64], eps: f64, abs_floor: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(point);
    assert_eq!(analytic.len(), point.len(), "gradient length mismatch");
    let mut x = point.to_vec();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = f(&x).0;
        x[i] = orig - eps;
        let fm = f(&x).0;
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(abs_floor);
        let err = (a - numeric).abs() / denom;
        if err > report.max_rel_err || !err.is_finite() {
            report = GradCheckReport { max_rel_err: err, worst_index: i, analytic: a, numeric };
        }
    }
    report
}
