/// Outcome of a central-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: Option<usize>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against `(f(x + h e_i) - f(x - h e_i)) / 2h` on the
/// coordinates in `coords` (all coordinates when `None`).
pub fn grad_check<F>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    tolerance: f64,
    coords: Option<&[usize]>,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "step must be positive");
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
        tolerance,
    };
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        if report.worst_index.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
        report.checked += 1;
    }
    report
}
