//! Finite-difference gradient verification.
//!
//! The checker is deliberately independent of the analytic backward paths
//! it is used to validate: it only evaluates the loss at perturbed
//! parameter vectors.

use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Floor for the relative-error denominator, so near-zero gradients do not
/// blow the ratio up on numerical noise. At this floor an absolute
/// disagreement above ~1e-9 on a zero-gradient coordinate still registers
/// well over the 1e-4 full-model tolerance.
const DENOM_FLOOR: f64 = 1e-5;

/// Compares `analytic` against central finite differences of `loss_fn`
/// around `params`, coordinate by coordinate, and returns the worst
/// relative error `|analytic - fd| / max(|fd|, 1e-6)`.
///
/// `params` is restored to its original contents before returning.
/// `loss_fn` must be deterministic; this is verified by evaluating it twice
/// at the unperturbed point.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &mut [f64],
    analytic: &[f64],
    eps: f64,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference eps must lie in [1e-7, 1e-3], got {eps}"
        )));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape(
            "finite_diff_check",
            format!("{} gradient entries", params.len()),
            format!("{}", analytic.len()),
        ));
    }

    let base = loss_fn(params);
    let again = loss_fn(params);
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministicLoss);
    }

    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + eps;
        let plus = loss_fn(params);
        params[i] = orig - eps;
        let minus = loss_fn(params);
        params[i] = orig;

        let fd = (plus - minus) / (2.0 * eps);
        let err = (analytic[i] - fd).abs() / fd.abs().max(DENOM_FLOOR);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}
