//! Central finite-difference check of analytic gradients.

use crate::error::{Error, Result};
use crate::params::{ParamBundle, TensorSet};

/// Detailed outcome of [`finite_difference_check_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(tensor index, flat entry)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Max relative error between the analytic gradient returned by `loss_fn`
/// and `(L(θ+ε) − L(θ−ε)) / 2ε` over every trainable scalar, with
/// denominator `max(|a|, |b|, 1e-8)`.
///
/// `loss_fn` must be deterministic; two evaluations at the unperturbed
/// parameters that differ are reported as [`Error::Determinism`].
pub fn finite_difference_check<F>(loss_fn: F, params: &ParamBundle, eps: f64) -> Result<f64>
where
    F: FnMut(&ParamBundle) -> Result<(f64, TensorSet)>,
{
    finite_difference_check_report(loss_fn, params, eps).map(|r| r.max_relative_error)
}

pub fn finite_difference_check_report<F>(mut loss_fn: F, params: &ParamBundle, eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamBundle) -> Result<(f64, TensorSet)>,
{
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("finite-difference step must be positive, got {eps}")));
    }
    let (first, analytic) = loss_fn(params)?;
    let (second, _) = loss_fn(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }
    if analytic.len() != params.trainable().len() {
        return Err(Error::Argument("gradient set does not match trainable tensors".into()));
    }

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (ti, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let original = probe.trainable()[ti].data()[k];
            probe.trainable_mut()[ti].data_mut()[k] = original + eps;
            let (plus, _) = loss_fn(&probe)?;
            probe.trainable_mut()[ti].data_mut()[k] = original - eps;
            let (minus, _) = loss_fn(&probe)?;
            probe.trainable_mut()[ti].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_relative_error || !rel.is_finite() {
                report.max_relative_error = rel;
                report.worst = (ti, k);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
