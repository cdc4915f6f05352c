use super::ParamSet;
use crate::error::{Error, Result};

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss` for every
/// scalar in `params` and returns the largest relative error.
///
/// `params` is perturbed in place and restored exactly after each probe.
pub fn gradient_check<P, F>(params: &mut P, analytic: &P, epsilon: f64, mut loss: F) -> Result<f64>
where
    P: ParamSet<f64>,
    F: FnMut(&P) -> f64,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::usage(format!(
            "gradient_check epsilon {epsilon} outside [1e-6, 1e-3]"
        )));
    }
    let grads: Vec<Vec<f64>> = analytic
        .tensors()
        .iter()
        .map(|t| t.as_slice().to_vec())
        .collect();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    if sizes != grads.iter().map(Vec::len).collect::<Vec<_>>() {
        return Err(Error::shape(
            "gradient_check",
            format!("parameter sizes {sizes:?}"),
            "analytic gradient sizes differ",
        ));
    }

    let mut worst = 0.0f64;
    for (ti, grad) in grads.iter().enumerate() {
        for (k, &g) in grad.iter().enumerate() {
            let orig = params.tensors()[ti].as_slice()[k];
            params.tensors_mut()[ti].as_mut_slice()[k] = orig + epsilon;
            let up = loss(params);
            params.tensors_mut()[ti].as_mut_slice()[k] = orig - epsilon;
            let down = loss(params);
            params.tensors_mut()[ti].as_mut_slice()[k] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss probing tensor {ti} element {k}"
                )));
            }
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_error(g, numeric));
        }
    }
    Ok(worst)
}
