//! Experiment configuration files.
//!
//! Every section is optional; omitted fields take their defaults.
//! Relative paths are resolved against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use cpg_core::inference::DecodeOptions;
use cpg_core::model::ModelConfig;
use cpg_core::training::TrainingSchedule;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabMode {
    Word,
    Bpe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub mode: VocabMode,
    /// Merges learned per language in `bpe` mode.
    pub bpe_merges: usize,
    pub min_count: u64,
    pub max_size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            mode: VocabMode::Word,
            bpe_merges: 8000,
            min_count: 1,
            max_size: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    /// Vocabularies, checkpoints, metrics and reports go here.
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            manifest: None,
            output_dir: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ExperimentConfig {
    /// Seeds initialization, sampling and subset selection; replaces
    /// `training.seed`.
    pub seed: u64,
    pub vocab: VocabConfig,
    pub model: ModelConfig,
    pub training: TrainingSchedule,
    pub decode: DecodeOptions,
    pub paths: PathsConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::path(path, e))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.paths.output_dir = base.join(&config.paths.output_dir);
        config.paths.manifest = config.paths.manifest.map(|m| base.join(m));
        Ok(config)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut config: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("config error: {}", e.message())))?;
        config.training.seed = config.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.training.validate()?;
        self.decode.validate()?;
        if self.vocab.max_size == 0 {
            return Err(CliError::Usage("config error: vocab.max_size must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
