use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::AttackerKind;
use crate::cdm::{Arch, Evaluation};
use crate::error::{check_format, Result};
use crate::unlearn::{Defense, DefenseKind, TuneRow};

pub const AUDIT_FORMAT: &str = "audit/1";

/// One (arch, defense, ratio, attacker, seed) result. A failed cell keeps
/// its coordinates, leaves the metrics empty and carries `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCell {
    pub arch: Arch,
    pub defense: DefenseKind,
    pub ratio: f64,
    pub attacker: AttackerKind,
    pub seed: u64,
    pub acc_mia: Option<f64>,
    pub auc_mia: Option<f64>,
    /// Hyperparameters of the selected defense.
    pub defense_hyper: Option<Defense>,
    /// One row per grid point when the defense was tuned.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tuning: Vec<TuneRow>,
    /// Defended model on retain-student test records.
    pub utility: Option<Evaluation>,
    /// Seconds spent on the defense and this cell's evaluation.
    pub wall_time: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub format: String,
    pub provenance: Provenance,
    pub cells: Vec<AuditCell>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    arch: Arch,
    defense: DefenseKind,
    ratio: f64,
    attacker: AttackerKind,
    seed: u64,
    acc_mia: Option<f64>,
    auc_mia: Option<f64>,
    defense_hyper: String,
    utility_acc: Option<f64>,
    utility_auc: Option<f64>,
    wall_time: f64,
    error: &'a str,
}

impl AuditReport {
    pub fn new(config_hash: String, cells: Vec<AuditCell>) -> Self {
        Self {
            format: AUDIT_FORMAT.to_string(),
            provenance: Provenance {
                config_hash,
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
            cells,
        }
    }

    /// Cells with `wall_time` zeroed, for reproducibility comparisons.
    pub fn rows_without_timing(&self) -> Vec<AuditCell> {
        self.cells
            .iter()
            .map(|c| AuditCell {
                wall_time: 0.0,
                ..c.clone()
            })
            .collect()
    }

    pub fn find(&self, arch: Arch, defense: DefenseKind, attacker: AttackerKind) -> Option<&AuditCell> {
        self.cells
            .iter()
            .find(|c| c.arch == arch && c.defense == defense && c.attacker == attacker)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: AuditReport = serde_json::from_str(s)?;
        check_format(AUDIT_FORMAT, &r.format)?;
        Ok(r)
    }

    /// Flat CSV, one row per cell.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.cells {
            let hyper = match &c.defense_hyper {
                Some(d) => serde_json::to_string(d)?,
                None => String::new(),
            };
            w.serialize(CsvRow {
                arch: c.arch,
                defense: c.defense,
                ratio: c.ratio,
                attacker: c.attacker,
                seed: c.seed,
                acc_mia: c.acc_mia,
                auc_mia: c.auc_mia,
                defense_hyper: hyper,
                utility_acc: c.utility.map(|u| u.accuracy),
                utility_auc: c.utility.and_then(|u| u.auc),
                wall_time: c.wall_time,
                error: c.error.as_deref().unwrap_or(""),
            })
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn save(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json()?)?;
        std::fs::write(csv_path, self.to_csv()?)?;
        Ok(())
    }
}
