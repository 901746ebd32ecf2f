use crate::error::{Error, Result};

/// Binary cross-entropy of `sigmoid(logit)` against `label`, computed as
/// `softplus(logit) - label * logit`.
///
/// Finite for every finite logit, and its derivative in the logit is
/// exactly `sigmoid(logit) - label`, the residual the backward passes use.
pub fn bce_with_logit(logit: f64, label: f64) -> Result<f64> {
    if !logit.is_finite() || !label.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite bce input (logit={logit}, label={label})"
        )));
    }
    let softplus = logit.max(0.0) + (-logit.abs()).exp().ln_1p();
    Ok(softplus - label * logit)
}
