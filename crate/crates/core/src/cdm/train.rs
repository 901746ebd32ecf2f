use serde::{Deserialize, Serialize};

use super::{CdmConfig, CdmModel};
use crate::audit::metrics::{accuracy, auc};
use crate::data::{Dataset, InteractionRecord, Part, SplitPlan};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, stream_id, AdamConfig, AdamState, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_auc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs_run: usize,
    /// 1-based epoch of the returned checkpoint, 0 for the initialization.
    pub best_epoch: usize,
    pub best_valid_auc: Option<f64>,
    pub history: Vec<EpochLog>,
}

/// Accuracy at the 0.5 threshold and AUC (None when only one class is present).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub auc: Option<f64>,
}

pub fn evaluate_cdm(model: &CdmModel, records: &[InteractionRecord]) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(Error::Validation("evaluation over no records".into()));
    }
    let scores = records
        .iter()
        .map(|r| model.predict_proba(r.student, r.question))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<u8> = records.iter().map(|r| r.response).collect();
    let auc = match auc(&scores, &labels) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Evaluation {
        accuracy: accuracy(&scores, &labels)?,
        auc,
    })
}

/// Trains a model on the train split of `scope` students, early-stopping on
/// the validation AUC of the same students.
///
/// Embeddings exist for every student in the dataset; students outside
/// `scope` never receive a gradient and keep their initial values.
pub fn train_cdm(
    dataset: &Dataset,
    plan: &SplitPlan,
    scope: &[usize],
    config: &CdmConfig,
) -> Result<(CdmModel, TrainLog)> {
    config.validate()?;
    let train = dataset.select(&plan.indices_for(scope, Part::Train));
    let valid = dataset.select(&plan.indices_for(scope, Part::Valid));
    train_on_records(dataset, &train, &valid, config)
}

/// Same as [`train_cdm`] with explicit record lists.
pub fn train_on_records(
    dataset: &Dataset,
    train: &[InteractionRecord],
    valid: &[InteractionRecord],
    config: &CdmConfig,
) -> Result<(CdmModel, TrainLog)> {
    if train.is_empty() {
        return Err(Error::Config("scoped training set is empty".into()));
    }
    let mut model = CdmModel::new(config, dataset.n_students(), dataset.q_matrix())?;
    let mut log = TrainLog::default();
    if config.epochs == 0 {
        return Ok((model, log));
    }

    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), &model.params);
    let mut grads = model.zero_grads_like();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = Rng::new(config.seed, stream_id("cdm-batches"));

    let valid_auc = |m: &CdmModel| -> Result<Option<f64>> {
        if valid.is_empty() {
            return Ok(None);
        }
        Ok(evaluate_cdm(m, valid)?.auc)
    };
    let mut best_auc = valid_auc(&model)?;
    let mut best = model.clone();
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                total += model.accumulate_grad(&train[i], scale, &mut grads)?;
            }
            for (block, g) in model.params.iter_mut().zip(grads.iter_mut()) {
                std::mem::swap(&mut block.grad, g);
            }
            // both buffers are zero again after the step
            adam_step(&mut model.params, &mut adam);
            model.clamp_monotone();
        }
        if model.params.iter().any(|b| !b.values.is_finite()) {
            return Err(Error::Numeric(format!("non-finite parameters after epoch {epoch}")));
        }
        let v = valid_auc(&model)?;
        log.history.push(EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            valid_auc: v,
        });
        log.epochs_run = epoch;

        match (v, best_auc) {
            (Some(cur), Some(b)) if cur <= b => since_best += 1,
            (Some(_), _) | (None, None) => {
                // strictly better, or no validation signal at all: keep latest
                best_auc = v;
                best = model.clone();
                log.best_epoch = epoch;
                since_best = 0;
            }
            (None, Some(_)) => since_best += 1,
        }
        if v.is_some() && since_best >= config.patience.max(1) {
            break;
        }
    }
    log.best_valid_auc = best_auc;
    Ok((best, log))
}
