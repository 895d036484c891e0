//! Central finite-difference verification of analytic gradients.

use crate::error::{CkdError, Result};
use crate::loss::LossWithGrad;
use crate::matrix::Matrix;

/// Largest `|analytic - numeric| / max(1, |analytic|)` over all entries of `input`.
///
/// `loss` must return the value and its gradient with respect to its argument.
pub fn finite_difference_check<F>(loss: F, input: &Matrix, epsilon: f64) -> Result<f64>
where
    F: Fn(&Matrix) -> Result<LossWithGrad>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(CkdError::invalid(format!(
            "epsilon must lie in (0, 1e-2], got {epsilon}"
        )));
    }
    let analytic = loss(input)?;
    input.check_same_shape(&analytic.grad, "finite_difference_check")?;

    let mut probe = input.clone();
    let mut worst = 0.0f64;
    for i in 0..input.as_slice().len() {
        let orig = input.as_slice()[i];
        probe.as_mut_slice()[i] = orig + epsilon;
        let plus = loss(&probe)?.value;
        probe.as_mut_slice()[i] = orig - epsilon;
        let minus = loss(&probe)?.value;
        probe.as_mut_slice()[i] = orig;

        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic.grad.as_slice()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
