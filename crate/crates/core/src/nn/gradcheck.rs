//! Central finite-difference check of analytic gradients.

use alloc::vec::Vec;

/// Absolute floor of the relative-error denominator, so that gradients that
/// are zero analytically do not amplify round-off.
pub const DENOMINATOR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index where the maximum occurred.
    pub worst_index: usize,
    pub checked: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compare `analytic` with central differences of `f` at `theta` over every
/// coordinate.
pub fn grad_check<F: FnMut(&[f64]) -> f64>(
    f: F,
    theta: &[f64],
    analytic: &[f64],
    eps: f64,
) -> GradCheckReport {
    let all: Vec<usize> = (0..theta.len()).collect();
    grad_check_subset(f, theta, analytic, eps, &all)
}

/// As [`grad_check`], restricted to the listed coordinates.
pub fn grad_check_subset<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    theta: &[f64],
    analytic: &[f64],
    eps: f64,
    indices: &[usize],
) -> GradCheckReport {
    assert!(eps > 0.0, "eps must be positive");
    assert_eq!(
        theta.len(),
        analytic.len(),
        "gradient length must match parameters"
    );
    let mut work = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    for &i in indices {
        let orig = work[i];
        let (hi, lo) = (orig + eps, orig - eps);
        work[i] = hi;
        let up = f(&work);
        work[i] = lo;
        let down = f(&work);
        work[i] = orig;
        // Divide by the step actually taken after rounding.
        let numeric = (up - down) / (hi - lo);
        let e = rel_error(analytic[i], numeric);
        if !report.max_rel_error.is_nan() && (e.is_nan() || e > report.max_rel_error) {
            report.max_rel_error = e;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    report
}

/// Evenly spread subset of `0..n` with at most `max` entries.
pub fn spread_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    (0..max).map(|k| k * n / max).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let c = [0.5, -2.0, 3.25, 1.0];
        let f = |t: &[f64]| t.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() + 4.0;
        // Dyadic inputs and step keep every evaluation exact.
        let rep = grad_check(f, &[0.125, 0.25, -0.375, 7.0], &c, 2f64.powi(-20));
        assert!(rep.max_rel_error < 1e-10, "{rep:?}");
        assert_eq!(rep.checked, 4);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let f = |t: &[f64]| t[0] * t[0] + (t[1]).sin();
        let theta = [0.7, 0.4];
        let good = [1.4, 0.4f64.cos()];
        assert!(grad_check(f, &theta, &good, 1e-6).max_rel_error < 1e-8);
        let bad = [1.4 * 1.05, 0.4f64.cos()];
        let rep = grad_check(f, &theta, &bad, 1e-6);
        assert!(rep.max_rel_error > 1e-2);
        assert_eq!(rep.worst_index, 0);
    }

    #[test]
    fn nan_is_reported() {
        let rep = grad_check(|t| t[0], &[1.0], &[f64::NAN], 1e-6);
        assert!(rep.max_rel_error.is_nan());
    }

    #[test]
    fn spread() {
        assert_eq!(spread_indices(3, 10), vec![0, 1, 2]);
        assert_eq!(spread_indices(10, 5), vec![0, 2, 4, 6, 8]);
    }
}
