/// Outcome of a central-difference gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` at `params` and
/// returns the maximum relative error `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn finite_diff_check(
    f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> f64 {
    finite_diff_check_excluding(f, params, analytic, eps, |_| false).max_rel_error
}

/// Like [`finite_diff_check`], skipping coordinates for which `skip` is true
/// (for example those whose perturbation crosses a non-differentiable kink).
pub fn finite_diff_check_excluding(
    mut f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    mut skip: impl FnMut(usize) -> bool,
) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len());
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
    };
    for i in 0..params.len() {
        if skip(i) {
            report.skipped += 1;
            continue;
        }
        probe[i] = params[i] + eps;
        let up = f(&probe);
        probe[i] = params[i] - eps;
        let down = f(&probe);
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * eps);
        let err = rel_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst_index = Some(i);
        }
    }
    report
}
