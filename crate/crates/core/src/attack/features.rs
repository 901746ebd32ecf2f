use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cdm::CdmModel;
use crate::data::InteractionRecord;
use crate::error::{Error, Result};

/// What the adversary observes: black-box sees the prediction and the true
/// response, grey-box additionally sees the student's knowledge state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Black,
    Grey,
}

impl FeatureMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureMode::Black => "black",
            FeatureMode::Grey => "grey",
        }
    }

    /// Feature vector length for a model with `n_kcs` knowledge components.
    pub fn width(&self, n_kcs: usize) -> usize {
        match self {
            FeatureMode::Black => 2,
            FeatureMode::Grey => 2 + n_kcs,
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `[proba, response]` in black mode, `[proba, response, kstate_0..]` in grey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackFeature {
    pub mode: FeatureMode,
    pub values: Vec<f64>,
}

impl AttackFeature {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn extract_features(model: &CdmModel, record: &InteractionRecord, mode: FeatureMode) -> Result<AttackFeature> {
    let p = model.predict_proba(record.student, record.question)?;
    let mut values = Vec::with_capacity(mode.width(model.n_kcs()));
    values.push(p);
    values.push(record.label());
    if mode == FeatureMode::Grey {
        values.extend(model.kstate(record.student)?);
    }
    Ok(AttackFeature { mode, values })
}

pub fn extract_batch(model: &CdmModel, records: &[InteractionRecord], mode: FeatureMode) -> Result<Vec<AttackFeature>> {
    records.iter().map(|r| extract_features(model, r, mode)).collect()
}

/// Checks that a training set is non-empty, uniform in mode and width, and
/// has both classes. Returns `(mode, width)`.
pub(crate) fn check_training_set(features: &[AttackFeature], labels: &[u8]) -> Result<(FeatureMode, usize)> {
    if features.is_empty() {
        return Err(Error::Validation("empty attack training set".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let mode = features[0].mode;
    let width = features[0].len();
    for f in features {
        if f.mode != mode || f.len() != width {
            return Err(Error::Validation("attack features differ in mode or length".into()));
        }
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite attack feature".into()));
        }
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Validation("attack labels must be 0 or 1".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Validation("attack training needs both classes".into()));
    }
    Ok((mode, width))
}

/// Per-dimension z-scoring fitted on the attack training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Smallest standard deviation kept; constant columns map to zero.
    pub const STD_FLOOR: f64 = 1e-8;

    pub fn fit(rows: &[&[f64]]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(Self::STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}
