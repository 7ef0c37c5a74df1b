use std::path::{Path, PathBuf};

use arccap_core::arcgame::ArcConfig;
use arccap_core::convcap::ModelConfig;
use arccap_core::data::DEFAULT_MIN_COUNT;
use arccap_core::decode::DecodeConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub annotations: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    /// Explicit split file; without it a seeded ratio split is used.
    pub split: Option<PathBuf>,
    /// Work directory holding every artifact.
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub min_count: usize,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            min_count: DEFAULT_MIN_COUNT,
            train_ratio: 0.8,
            val_ratio: 0.1,
            test_ratio: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            batch_size: 32,
            lr: 0.2,
        }
    }
}

/// Everything a command can be told. Loaded from TOML; flags override.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 means all available cores.
    pub threads: usize,
    pub paths: Paths,
    pub data: DataConfig,
    /// `vocab_size`, `feature_dim` and `seed` are filled in at training time.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub arc: ArcConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            threads: 0,
            paths: Paths::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            arc: ArcConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| arccap_core::Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.decode.beam_size == 0 {
            return usage("beam size must be at least 1".into());
        }
        if let Err(e) = self.decode.validate() {
            return usage(e.to_string());
        }
        if !(self.arc.tol > 0.0) || self.arc.max_iter == 0 {
            return usage("arc tol must be positive and max_iter at least 1".into());
        }
        if !(self.arc.eta0 >= 0.0) {
            return usage("arc eta0 must be non-negative".into());
        }
        if self.train.batch_size == 0 || !(self.train.lr >= 0.0) {
            return usage("train batch_size must be at least 1 and lr non-negative".into());
        }
        if self.data.min_count == 0 {
            return usage("data min_count must be at least 1".into());
        }
        let ratios = [self.data.train_ratio, self.data.val_ratio, self.data.test_ratio];
        if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return usage("split ratios must be non-negative and sum to 1".into());
        }
        Ok(())
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.paths
            .out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out <dir> is required".into()))
    }
}
