use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use cdaudit::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FORMAT: &str = "manifest/1";

/// `<out>/checkpoints`, `<out>/reports`, `<out>/charts`, `<out>/data` and
/// `<out>/manifest.json`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["checkpoints", "reports", "charts", "data"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn charts(&self) -> PathBuf {
        self.root.join("charts")
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Write-temp-then-rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Atomic variant for writers that take a path.
pub fn write_atomic_with(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = temp_path(path);
    write(&tmp)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub version: String,
    pub seed: u64,
    pub effective_config: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub finished_unix: u64,
}

/// One entry per command, so successive commands in the same output
/// directory accumulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub runs: BTreeMap<String, RunEntry>,
}

fn hashes(root: &Path, files: &[PathBuf]) -> Result<Vec<FileHash>> {
    files
        .iter()
        .map(|f| {
            let shown = f.strip_prefix(root).unwrap_or(f);
            Ok(FileHash {
                path: shown.to_string_lossy().into_owned(),
                sha256: sha256_file(f)?,
            })
        })
        .collect()
}

pub fn record_run(
    layout: &Layout,
    command: &str,
    seed: u64,
    effective_config: serde_json::Value,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<()> {
    let path = layout.manifest();
    let mut manifest = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or(Manifest {
            format: MANIFEST_FORMAT.to_string(),
            runs: BTreeMap::new(),
        }),
        Err(_) => Manifest {
            format: MANIFEST_FORMAT.to_string(),
            runs: BTreeMap::new(),
        },
    };
    let entry = RunEntry {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        effective_config,
        inputs: hashes(&layout.root, inputs)?,
        outputs: hashes(&layout.root, outputs)?,
        finished_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    manifest.runs.insert(command.to_string(), entry);
    write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())
}
