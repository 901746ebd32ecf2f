use serde::{Deserialize, Serialize};

use crate::cdm::CdmModel;
use crate::data::InteractionRecord;
use crate::error::{Error, Result};
use crate::numerics::{stream_id, Rng};

/// Finite-difference step for Hessian-vector products.
pub const HVP_STEP: f64 = 1e-4;
/// Records per HVP batch.
pub const HVP_BATCH_SIZE: usize = 512;

/// Diagonal Hessian estimate in flat parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianDiag {
    pub diag: Vec<f64>,
    pub n_probe_samples: usize,
}

/// `H z ≈ [g(θ + h z) − g(θ − h z)] / 2h`.
pub fn hvp<G>(grad_fn: &mut G, theta: &[f64], z: &[f64], h: f64) -> Result<Vec<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let plus: Vec<f64> = theta.iter().zip(z).map(|(t, v)| t + h * v).collect();
    let minus: Vec<f64> = theta.iter().zip(z).map(|(t, v)| t - h * v).collect();
    let gp = grad_fn(&plus)?;
    let gm = grad_fn(&minus)?;
    let out: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite Hessian-vector product".into()));
    }
    Ok(out)
}

/// Hutchinson estimator of diag(H): the mean of `z ⊙ Hz` over Rademacher
/// probes `z`. Each entry of `grad_fns` is one data batch; every batch gets
/// `n_probes` fresh probes.
pub fn hutchinson_diag<G>(
    grad_fns: &mut [G],
    theta: &[f64],
    n_probes: usize,
    rng: &mut Rng,
    h: f64,
) -> Result<HessianDiag>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if n_probes == 0 || grad_fns.is_empty() {
        return Err(Error::Config(
            "Hutchinson needs at least one probe and one batch".into(),
        ));
    }
    let mut acc = vec![0.0; theta.len()];
    let mut count = 0usize;
    for g in grad_fns.iter_mut() {
        for _ in 0..n_probes {
            let z: Vec<f64> = (0..theta.len()).map(|_| rng.rademacher()).collect();
            let hz = hvp(g, theta, &z, h)?;
            for ((a, zi), hzi) in acc.iter_mut().zip(&z).zip(&hz) {
                *a += zi * hzi;
            }
            count += 1;
        }
    }
    let inv = 1.0 / count as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(HessianDiag {
        diag: acc,
        n_probe_samples: count,
    })
}

/// Hessian diagonal of the mean BCE over `n_batches` shuffled batches of
/// `records`.
pub fn hutchinson_hessian_diag(
    model: &CdmModel,
    records: &[InteractionRecord],
    n_probes: usize,
    n_batches: usize,
    seed: u64,
) -> Result<HessianDiag> {
    if records.is_empty() {
        return Err(Error::Validation("Hessian estimate over no records".into()));
    }
    if n_batches == 0 {
        return Err(Error::Config("n_batches must be >= 1".into()));
    }
    let mut rng = Rng::new(seed, stream_id("hutchinson"));
    let mut order: Vec<usize> = (0..records.len()).collect();
    rng.fork("batches").shuffle(&mut order);
    let batches: Vec<Vec<InteractionRecord>> = order
        .chunks(HVP_BATCH_SIZE)
        .take(n_batches)
        .map(|c| c.iter().map(|&i| records[i]).collect())
        .collect();

    let theta = model.flat_params();
    let mut fns: Vec<_> = batches
        .iter()
        .map(|batch| {
            let mut probe = model.clone();
            move |t: &[f64]| {
                probe.set_flat_params(t);
                probe.flat_grad(batch)
            }
        })
        .collect();
    hutchinson_diag(&mut fns, &theta, n_probes, &mut rng, HVP_STEP)
}
