use serde::{Deserialize, Serialize};

use super::hessian::hutchinson_hessian_diag;
use crate::cdm::CdmModel;
use crate::data::InteractionRecord;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Damping added to |h| in the Newton step.
pub const LCODEC_DAMPING: f64 = 1e-3;
/// Guards the SSD ratio against a zero forget importance.
pub const SSD_EPS: f64 = 1e-12;

/// Gradient ascent on the mean forget-set loss, `steps` times.
pub fn amnesiac_unlearn(model: &CdmModel, forget: &[InteractionRecord], lr: f64, steps: usize) -> Result<CdmModel> {
    if forget.is_empty() {
        return Err(Error::Validation(
            "amnesiac unlearning needs a nonempty forget set".into(),
        ));
    }
    let mut out = model.clone();
    if lr == 0.0 {
        return Ok(out);
    }
    for _ in 0..steps {
        let g = out.flat_grad(forget)?;
        let mut theta = out.flat_params();
        theta.iter_mut().zip(&g).for_each(|(t, gi)| *t += lr * gi);
        out.set_flat_params(&theta);
        out.clamp_monotone();
    }
    Ok(out)
}

/// Empirical Fisher diagonal: per-parameter mean of squared per-record
/// gradients, in flat parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherDiag {
    pub diag: Vec<f64>,
}

pub fn fisher_diag(model: &CdmModel, records: &[InteractionRecord]) -> Result<FisherDiag> {
    if records.is_empty() {
        return Err(Error::Validation("Fisher estimate over no records".into()));
    }
    let mut grads: Vec<Matrix> = model.zero_grads_like();
    let n: usize = grads.iter().map(Matrix::len).sum();
    let mut acc = vec![0.0; n];
    for r in records {
        grads.iter_mut().for_each(|g| g.fill(0.0));
        model.accumulate_grad(r, 1.0, &mut grads)?;
        let flat = grads.iter().flat_map(|g| g.as_slice().iter());
        for (a, g) in acc.iter_mut().zip(flat) {
            *a += g * g;
        }
    }
    let inv = 1.0 / records.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(FisherDiag { diag: acc })
}

/// Dampening factor for one parameter, or `None` when it is not selected.
pub fn ssd_factor(f_retain: f64, f_forget: f64, alpha: f64, lambda: f64) -> Option<f64> {
    if f_forget > alpha * f_retain {
        Some((lambda * f_retain / (f_forget + SSD_EPS)).min(1.0))
    } else {
        None
    }
}

/// Selective synaptic dampening: parameters far more important to the
/// forget set than to the retain set are shrunk toward zero.
pub fn ssd_unlearn(
    model: &CdmModel,
    forget: &[InteractionRecord],
    retain: &[InteractionRecord],
    alpha: f64,
    lambda: f64,
) -> Result<CdmModel> {
    let f_r = fisher_diag(model, retain)?;
    let f_f = fisher_diag(model, forget)?;
    Ok(apply_ssd(model, &f_r, &f_f, alpha, lambda))
}

pub(crate) fn apply_ssd(model: &CdmModel, f_r: &FisherDiag, f_f: &FisherDiag, alpha: f64, lambda: f64) -> CdmModel {
    let mut theta = model.flat_params();
    let mut changed = false;
    for (i, t) in theta.iter_mut().enumerate() {
        if let Some(beta) = ssd_factor(f_r.diag[i], f_f.diag[i], alpha, lambda) {
            if beta != 1.0 {
                *t *= beta;
                changed = true;
            }
        }
    }
    let mut out = model.clone();
    if changed {
        out.set_flat_params(&theta);
        out.clamp_monotone();
    }
    out
}

/// One damped diagonal Newton step that removes the forget set's
/// influence: `θ' = θ + scale · g_f ⊘ (|h| + δ)` with `scale = |D_f| / |D_r|`
/// and `h` the Hutchinson diagonal on retain batches.
pub fn lcodec_unlearn(
    model: &CdmModel,
    forget: &[InteractionRecord],
    retain: &[InteractionRecord],
    n_probes: usize,
    n_batches: usize,
    seed: u64,
) -> Result<CdmModel> {
    if retain.is_empty() {
        return Err(Error::Validation("L-CODEC needs a nonempty retain set".into()));
    }
    if forget.is_empty() {
        return Err(Error::Validation("L-CODEC needs a nonempty forget set".into()));
    }
    let g_f = model.flat_grad(forget)?;
    if g_f.iter().all(|&g| g == 0.0) {
        return Ok(model.clone());
    }
    let h = hutchinson_hessian_diag(model, retain, n_probes, n_batches, seed)?;
    let scale = forget.len() as f64 / retain.len() as f64;
    Ok(newton_removal(model, &g_f, &h.diag, scale))
}

/// The L-CODEC parameter update for a given forget gradient and Hessian
/// diagonal, followed by the monotonicity clamp.
pub fn newton_removal(model: &CdmModel, g_f: &[f64], h: &[f64], scale: f64) -> CdmModel {
    let mut theta = model.flat_params();
    for ((t, g), hi) in theta.iter_mut().zip(g_f).zip(h) {
        *t += scale * g / (hi.abs() + LCODEC_DAMPING);
    }
    let mut out = model.clone();
    out.set_flat_params(&theta);
    out.clamp_monotone();
    out
}
