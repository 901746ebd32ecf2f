use crate::error::{Error, Result};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Compares an analytic gradient against central differences of `loss_fn`.
///
/// Checks the coordinates in `coords` (all coordinates when `None`) and
/// returns `max |g_analytic - g_fd| / max(1, |g_fd|)`.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    h: f64,
    coords: Option<&[usize]>,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != params.len() {
        return Err(Error::Validation(format!(
            "gradient length {} does not match parameter length {}",
            analytic.len(),
            params.len()
        )));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut theta = params.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = loss_fn(&theta)?;
        theta[i] = orig - h;
        let minus = loss_fn(&theta)?;
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at coordinate {i}")));
        }
        let fd = (plus - minus) / (2.0 * h);
        let rel = (analytic[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}
