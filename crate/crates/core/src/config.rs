//! Run configuration: JSON with strict key checking and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::NetConfig;
use crate::objmodel::ModelConfig;
use crate::sim::TaskSpec;
use crate::train::{RunSpec, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub task: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub net: NetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            task: "toast_bread".into(),
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            net: NetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Every problem, one message per field group.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        if let Err(e) = TaskSpec::by_name(&self.task) {
            errs.push(format!("task: {e}"));
        }
        if self.out_dir.as_os_str().is_empty() {
            errs.push("out_dir: must not be empty".into());
        }
        for (group, r) in [
            ("net", self.net.validate()),
            ("model", self.model.validate()),
            ("train", self.train.validate()),
        ] {
            if let Err(e) = r {
                errs.push(format!("{group}: {e}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    pub fn run_spec(&self) -> Result<RunSpec, ConfigError> {
        self.validate()?;
        Ok(RunSpec {
            task: TaskSpec::by_name(&self.task).map_err(|e| ConfigError::Invalid(vec![e.to_string()]))?,
            seed: self.seed,
            net: self.net.clone(),
            model: self.model.clone(),
            train: self.train.clone(),
        })
    }
}
