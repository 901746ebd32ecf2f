//! Approximate unlearning defenses (Amnesiac gradient ascent, an L-CODEC
//! style Hutchinson/Newton step, selective synaptic dampening), the retrain
//! gold standard, and grid search over defense hyperparameters.

mod hessian;
mod methods;

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use hessian::{hutchinson_diag, hutchinson_hessian_diag, hvp, HessianDiag, HVP_BATCH_SIZE, HVP_STEP};
pub use methods::{
    amnesiac_unlearn, fisher_diag, lcodec_unlearn, newton_removal, ssd_factor, ssd_unlearn, FisherDiag, LCODEC_DAMPING,
    SSD_EPS,
};

use crate::cdm::{train_cdm, CdmConfig, CdmModel, TrainLog};
use crate::data::{Dataset, InteractionRecord, SplitPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefenseKind {
    None,
    Retrain,
    Amnesiac,
    Lcodec,
    Ssd,
}

impl DefenseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DefenseKind::None => "none",
            DefenseKind::Retrain => "retrain",
            DefenseKind::Amnesiac => "amnesiac",
            DefenseKind::Lcodec => "lcodec",
            DefenseKind::Ssd => "ssd",
        }
    }

    /// Hyperparameter grid searched during tuning.
    pub fn default_grid(&self) -> Vec<Defense> {
        match self {
            DefenseKind::None => vec![Defense::None],
            DefenseKind::Retrain => vec![Defense::Retrain],
            DefenseKind::Amnesiac => {
                let mut g = Vec::new();
                for lr in [1e-5, 5e-5, 1e-4] {
                    for steps in [1, 3, 5] {
                        g.push(Defense::Amnesiac { lr, steps });
                    }
                }
                g
            }
            DefenseKind::Lcodec => {
                let mut g = Vec::new();
                for n_probes in [10, 20, 40] {
                    for n_batches in [1, 2] {
                        g.push(Defense::Lcodec { n_probes, n_batches });
                    }
                }
                g
            }
            DefenseKind::Ssd => {
                let mut g = Vec::new();
                for alpha in [1.3, 2.0, 2.5, 5.0] {
                    for lambda in [0.1, 0.3, 0.5, 0.8] {
                        g.push(Defense::Ssd { alpha, lambda });
                    }
                }
                g
            }
        }
    }
}

impl fmt::Display for DefenseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DefenseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DefenseKind::None),
            "retrain" => Ok(DefenseKind::Retrain),
            "amnesiac" => Ok(DefenseKind::Amnesiac),
            "lcodec" => Ok(DefenseKind::Lcodec),
            "ssd" => Ok(DefenseKind::Ssd),
            other => Err(Error::Config(format!("unknown defense {other:?}"))),
        }
    }
}

/// A defense with concrete hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum Defense {
    None,
    Retrain,
    Amnesiac { lr: f64, steps: usize },
    Lcodec { n_probes: usize, n_batches: usize },
    Ssd { alpha: f64, lambda: f64 },
}

impl Defense {
    pub fn kind(&self) -> DefenseKind {
        match self {
            Defense::None => DefenseKind::None,
            Defense::Retrain => DefenseKind::Retrain,
            Defense::Amnesiac { .. } => DefenseKind::Amnesiac,
            Defense::Lcodec { .. } => DefenseKind::Lcodec,
            Defense::Ssd { .. } => DefenseKind::Ssd,
        }
    }
}

/// Inputs of one approximate unlearning run.
#[derive(Debug, Clone, Copy)]
pub struct ForgetRequest<'a> {
    pub model: &'a CdmModel,
    /// Train-split records of the forget students.
    pub forget: &'a [InteractionRecord],
    /// Train-split records of the retain students.
    pub retain: &'a [InteractionRecord],
    pub defense: Defense,
    pub seed: u64,
}

impl ForgetRequest<'_> {
    pub fn validate(&self) -> Result<()> {
        let f: HashSet<(usize, usize)> = self.forget.iter().map(|r| (r.student, r.question)).collect();
        if self.retain.iter().any(|r| f.contains(&(r.student, r.question))) {
            return Err(Error::Validation("forget and retain records overlap".into()));
        }
        Ok(())
    }
}

/// Runs an approximate defense. `None` returns the model unchanged;
/// `Retrain` needs the dataset and goes through [`retrain`] instead.
pub fn unlearn(req: &ForgetRequest<'_>) -> Result<CdmModel> {
    req.validate()?;
    match req.defense {
        Defense::None => Ok(req.model.clone()),
        Defense::Retrain => Err(Error::Config(
            "retrain is not an in-place defense; call unlearn::retrain".into(),
        )),
        Defense::Amnesiac { lr, steps } => amnesiac_unlearn(req.model, req.forget, lr, steps),
        Defense::Lcodec { n_probes, n_batches } => {
            lcodec_unlearn(req.model, req.forget, req.retain, n_probes, n_batches, req.seed)
        }
        Defense::Ssd { alpha, lambda } => ssd_unlearn(req.model, req.forget, req.retain, alpha, lambda),
    }
}

/// Gold-standard unlearning: train from scratch on the retain students.
pub fn retrain(dataset: &Dataset, plan: &SplitPlan, config: &CdmConfig) -> Result<(CdmModel, TrainLog)> {
    train_cdm(dataset, plan, &plan.retain, config)
}

/// Distance of an attack from chance: `|AUC − 0.5| + |ACC − 0.5|`.
pub fn chance_distance(acc_mia: f64, auc_mia: f64) -> f64 {
    (auc_mia - 0.5).abs() + (acc_mia - 0.5).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub index: usize,
    pub defense: Defense,
    pub acc_mia: f64,
    pub auc_mia: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best: Defense,
    pub best_index: usize,
    pub rows: Vec<TuneRow>,
}

/// Evaluates every grid point and selects the one whose attack metrics are
/// closest to chance. Ties go to the lower grid index.
///
/// `evaluate` runs the defense and returns `(acc_mia, auc_mia)`; grid points
/// are evaluated in parallel.
pub fn tune_defense<E>(grid: &[Defense], evaluate: E) -> Result<TuneOutcome>
where
    E: Fn(usize, &Defense) -> Result<(f64, f64)> + Sync,
{
    if grid.is_empty() {
        return Err(Error::Config("empty defense grid".into()));
    }
    let rows = grid
        .par_iter()
        .enumerate()
        .map(|(index, defense)| {
            let (acc_mia, auc_mia) = evaluate(index, defense)?;
            Ok(TuneRow {
                index,
                defense: *defense,
                acc_mia,
                auc_mia,
                score: chance_distance(acc_mia, auc_mia),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best_index = 0;
    for row in &rows {
        if row.score < rows[best_index].score {
            best_index = row.index;
        }
    }
    Ok(TuneOutcome {
        best: grid[best_index],
        best_index,
        rows,
    })
}
