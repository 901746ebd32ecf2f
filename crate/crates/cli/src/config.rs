use std::path::{Path, PathBuf};

use cdaudit::attack::{AttackConfig, AttackerKind};
use cdaudit::audit::AuditPlan;
use cdaudit::cdm::{Arch, CdmConfig};
use cdaudit::data::{generate_synthetic, load_dataset, Dataset, SyntheticSpec};
use cdaudit::radar::RadarStyle;
use cdaudit::unlearn::{Defense, DefenseKind};
use cdaudit::{Error, Result};
use serde::{Deserialize, Serialize};

/// One pipeline run. Every section is optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub cdm: CdmConfig,
    pub split: SplitConfig,
    pub attack: AttackConfig,
    pub audit: AuditSection,
    pub radar: RadarSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            cdm: CdmConfig::default(),
            split: SplitConfig::default(),
            attack: AttackConfig::default(),
            audit: AuditSection::default(),
            radar: RadarSection::default(),
        }
    }
}

/// Either CSV files or a synthetic spec. With neither, a Frcsub-shaped
/// synthetic dataset seeded by the run seed is used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub records: Option<PathBuf>,
    pub q_matrix: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub ratio: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { ratio: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSection {
    pub archs: Vec<Arch>,
    pub defenses: Vec<DefenseKind>,
    /// Defaults to `[split.ratio]`.
    pub ratios: Option<Vec<f64>>,
    pub attackers: Vec<AttackerKind>,
    /// Defaults to `[seed]`.
    pub seeds: Option<Vec<u64>>,
    pub grids: Vec<Defense>,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            archs: vec![Arch::NeuralCd],
            defenses: vec![DefenseKind::None, DefenseKind::Retrain],
            ratios: None,
            attackers: vec![AttackerKind::GbdtBlack, AttackerKind::DcaGrey],
            seeds: None,
            grids: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarSection {
    pub k: usize,
    pub n: usize,
    pub style: RadarStyle,
}

impl Default for RadarSection {
    fn default() -> Self {
        Self {
            k: 8,
            n: 100,
            style: RadarStyle::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{}: {}", origin.display(), e.message())))?;
        // relative data paths are relative to the config file
        if let Some(dir) = origin.parent() {
            for p in [&mut cfg.data.records, &mut cfg.data.q_matrix].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Schema checks that need no data. Runs before any compute.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        match (&d.records, &d.q_matrix, &d.synthetic) {
            (Some(_), Some(_), None) | (None, None, _) => {}
            (Some(_), Some(_), Some(_)) => {
                return Err(Error::Config(
                    "data: give either CSV paths or a synthetic spec, not both".into(),
                ))
            }
            _ => {
                return Err(Error::Config(
                    "data: records and q_matrix must be given together".into(),
                ))
            }
        }
        if let Some(spec) = &d.synthetic {
            spec.validate()?;
        }
        self.cdm.validate()?;
        self.attack.nn.validate()?;
        if !(self.split.ratio > 0.0 && self.split.ratio <= 1.0 / 3.0) {
            return Err(Error::Config(format!(
                "split.ratio {} outside (0, 1/3]",
                self.split.ratio
            )));
        }
        self.audit_plan().validate()?;
        self.radar.style.validate()?;
        if self.radar.k < 3 {
            return Err(Error::Config("radar.k must be at least 3".into()));
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        self.data
            .synthetic
            .clone()
            .unwrap_or_else(|| SyntheticSpec::frcsub_shape(self.seed))
    }

    pub fn dataset(&self) -> Result<Dataset> {
        match (&self.data.records, &self.data.q_matrix) {
            (Some(r), Some(q)) => load_dataset(r, q),
            _ => Ok(generate_synthetic(&self.synthetic_spec())?.0),
        }
    }

    /// Input files whose hashes go into the manifest.
    pub fn input_files(&self) -> Vec<PathBuf> {
        [&self.data.records, &self.data.q_matrix]
            .into_iter()
            .flatten()
            .cloned()
            .collect()
    }

    pub fn cdm_config(&self) -> CdmConfig {
        CdmConfig {
            seed: self.seed,
            ..self.cdm.clone()
        }
    }

    pub fn audit_plan(&self) -> AuditPlan {
        let a = &self.audit;
        AuditPlan {
            archs: a.archs.clone(),
            defenses: a.defenses.clone(),
            ratios: a.ratios.clone().unwrap_or_else(|| vec![self.split.ratio]),
            attackers: a.attackers.clone(),
            seeds: a.seeds.clone().unwrap_or_else(|| vec![self.seed]),
            grids: a.grids.clone(),
            cdm: self.cdm.clone(),
            attack: self.attack,
        }
    }
}
