//! Central finite-difference gradient checking.

use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// One evaluation of the function under test.
#[derive(Debug, Clone, Copy)]
pub struct Probe<T> {
    pub value: T,
    /// Distance to the nearest non-differentiable point encountered.
    pub kink_distance: T,
    /// Fingerprint of the discrete state (sign patterns, argmax rows, votes).
    pub pattern: u64,
}

impl<T: Scalar> Probe<T> {
    /// Probe of an everywhere-smooth function.
    pub fn smooth(value: T) -> Self {
        Self {
            value,
            kink_distance: T::infinity(),
            pattern: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport<T> {
    pub max_rel_error: T,
    /// `(parameter, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates skipped because an evaluation touched or crossed a kink.
    pub skipped: Vec<(usize, usize)>,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error<T: Scalar>(analytic: T, numeric: T, floor: T) -> T {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor for [`relative_error`]; keeps near-zero gradients from
/// amplifying round-off in the difference quotient.
pub const DEFAULT_REL_FLOOR: f64 = 1e-4;

/// Compares `analytic` gradients against `(f(p+ε) − f(p−ε)) / 2ε` per coordinate.
///
/// A coordinate is skipped when any of the three evaluations lands within `eps`
/// of a kink or when the discrete state differs between them.
pub fn finite_diff_gradcheck<T: Scalar>(
    mut f: impl FnMut(&[Matrix<T>]) -> Probe<T>,
    params: &[Matrix<T>],
    analytic: &[Matrix<T>],
    eps: T,
    tol: T,
) -> GradcheckReport<T> {
    assert!(eps > T::zero(), "finite-difference step must be positive");
    assert_eq!(params.len(), analytic.len());
    let floor = T::of(DEFAULT_REL_FLOOR);
    let mut work: Vec<Matrix<T>> = params.to_vec();
    let centre = f(&work);
    let mut report = GradcheckReport {
        max_rel_error: T::zero(),
        worst: None,
        checked: 0,
        skipped: Vec::new(),
        passed: true,
    };
    let two = T::of(2.0);

    for (pi, param) in params.iter().enumerate() {
        assert_eq!(param.shape(), analytic[pi].shape(), "gradient shape for parameter {pi}");
        for idx in 0..param.len() {
            let orig = param.data()[idx];
            work[pi].data_mut()[idx] = orig + eps;
            let plus = f(&work);
            work[pi].data_mut()[idx] = orig - eps;
            let minus = f(&work);
            work[pi].data_mut()[idx] = orig;

            let near_kink = [centre, plus, minus].iter().any(|p| p.kink_distance < eps);
            let crossed = plus.pattern != centre.pattern || minus.pattern != centre.pattern;
            if near_kink || crossed {
                report.skipped.push((pi, idx));
                continue;
            }
            let numeric = (plus.value - minus.value) / (two * eps);
            let err = relative_error(analytic[pi].data()[idx], numeric, floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((pi, idx));
            }
        }
    }
    report.passed = report.max_rel_error <= tol;
    report
}
