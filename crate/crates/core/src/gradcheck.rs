//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are judged by an absolute error of `tolerance * REL_FLOOR`.
const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error per parameter tensor.
    pub max_rel_error: Vec<f64>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error.iter().all(|e| *e <= self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradients returned by `loss_fn` with central
/// differences of step `step` on every entry of every parameter.
///
/// `loss_fn` maps a parameter list to `(loss, gradients)`; gradients must be
/// aligned with the parameter list.
pub fn finite_difference_check<F>(
    mut loss_fn: F,
    params: &[Tensor],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let (_, analytic) = loss_fn(params)?;
    let mut work = params.to_vec();
    let mut max_rel_error = Vec::with_capacity(params.len());
    for (p, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..work[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let (plus, _) = loss_fn(&work)?;
            work[p].data_mut()[i] = orig - step;
            let (minus, _) = loss_fn(&work)?;
            work[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
        max_rel_error.push(worst);
    }
    Ok(GradCheckReport { max_rel_error, tolerance })
}
