//! Optional JSON config file. Every key mirrors a flag; flags win over the
//! file, the file wins over built-in defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use crowdprm::dataio::{Split, SyntheticSpec};
use crowdprm::predict::Objective;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub pipeline: Option<String>,
    pub model: Option<String>,
    pub classifier: Option<String>,
    pub manifest: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub cmax: Option<u32>,
    pub cmax_from: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
    pub per_class: Option<usize>,
    pub sizes: Option<Vec<usize>>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub milestones: Option<Vec<usize>>,
    pub class_weight: Option<f64>,
    pub objective: Option<Objective>,
    pub name: Option<String>,
    pub split: Option<Split>,
    pub n: Option<usize>,
    pub synthetic: Option<SyntheticSpec>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }
}

/// A problem with how the program was invoked (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Flag, then file, then nothing.
pub fn pick<T>(flag: Option<T>, file: &Option<T>) -> Option<T>
where
    T: Clone,
{
    flag.or_else(|| file.clone())
}

/// Flag, then file, or a usage error naming the flag.
pub fn require<T: Clone>(flag: Option<T>, file: &Option<T>, name: &str) -> anyhow::Result<T> {
    match pick(flag, file) {
        Some(v) => Ok(v),
        None => usage(format!("missing required option --{name}")),
    }
}
