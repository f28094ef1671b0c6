//! Central finite-difference verification of analytic gradients.

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Compares the gradients already accumulated in `params` against central
/// differences `(loss(p + h) - loss(p - h)) / 2h` of `loss`, one unfrozen
/// coordinate at a time. Frozen parameters are skipped; with nothing to
/// check the reported error is 0.
///
/// Values are restored exactly after each perturbation.
pub fn finite_difference_check<F>(mut loss: F, params: &mut ParamSet, h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Argument(format!("step h must be positive, got {h}")));
    }
    let first = loss(params)?;
    let second = loss(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let ids: Vec<_> = params
        .iter()
        .filter(|(_, p)| !p.frozen)
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        for k in 0..params.value(id).len() {
            let original = params.value(id).data()[k];
            params.param_mut(id).value.data_mut()[k] = original + h;
            let plus = loss(params)?;
            params.param_mut(id).value.data_mut()[k] = original - h;
            let minus = loss(params)?;
            params.param_mut(id).value.data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = params.grad(id).data()[k];
            let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.param(id).name.clone(), k));
            }
        }
    }
    Ok(report)
}
