use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, CdmConfig, CdmModel, TrainLog};
use crate::data::QMatrix;
use crate::error::{check_format, Error, Result};
use crate::numerics::ParamBlock;

pub const CDM_CKPT_FORMAT: &str = "cdm-ckpt/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_valid_auc: Option<f64>,
}

impl From<&TrainLog> for TrainSummary {
    fn from(log: &TrainLog) -> Self {
        Self {
            epochs_run: log.epochs_run,
            best_epoch: log.best_epoch,
            best_valid_auc: log.best_valid_auc,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    arch: Arch,
    config: CdmConfig,
    n_students: usize,
    q_matrix: Vec<Vec<u8>>,
    blocks: Vec<ParamBlock>,
    training: Option<TrainSummary>,
}

impl CdmModel {
    pub fn to_checkpoint_json(&self, training: Option<&TrainLog>) -> Result<String> {
        let q_matrix = (0..self.n_questions)
            .map(|j| self.q.row(j).iter().map(|&v| v as u8).collect())
            .collect();
        let file = CheckpointFile {
            format: CDM_CKPT_FORMAT.to_string(),
            arch: self.arch,
            config: self.config.clone(),
            n_students: self.n_students,
            q_matrix,
            blocks: self.params.clone(),
            training: training.map(TrainSummary::from),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Restores a model; the reload is bit-exact.
    pub fn from_checkpoint_json(s: &str) -> Result<(CdmModel, Option<TrainSummary>)> {
        let file: CheckpointFile = serde_json::from_str(s)?;
        check_format(CDM_CKPT_FORMAT, &file.format)?;
        if file.arch != file.config.arch {
            return Err(Error::Validation(format!(
                "checkpoint arch {} disagrees with config arch {}",
                file.arch, file.config.arch
            )));
        }
        let q = QMatrix::from_rows(file.q_matrix)?;
        let model = CdmModel::from_parts(file.config, file.n_students, &q, file.blocks)?;
        Ok((model, file.training))
    }

    pub fn save(&self, path: &Path, training: Option<&TrainLog>) -> Result<()> {
        fs::write(path, self.to_checkpoint_json(training)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(CdmModel, Option<TrainSummary>)> {
        Self::from_checkpoint_json(&fs::read_to_string(path)?)
    }
}
