//! Run configuration: a TOML file with `[model]`, `[train]` and `[data]`.

use std::path::Path;

use dsl_core::learner::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub label_column: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            label_column: "label".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.train
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        if self.model.d == 0 {
            return Err(CliError::config("model.d must be at least 1"));
        }
        if self
            .model
            .a_hidden
            .iter()
            .chain(&self.model.coef_hidden)
            .any(|&h| h == 0)
        {
            return Err(CliError::config("hidden layer widths must be positive"));
        }
        if self.data.label_column.is_empty() {
            return Err(CliError::config("data.label_column must not be empty"));
        }
        Ok(())
    }
}

/// Parse and validate configuration text.
pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let cfg: RunConfig =
        toml::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text)
}

/// Tolerance presets selected by `--precision`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Precision {
    /// 1e-4 for shooting and exit-time tolerances
    Standard,
    /// 1e-8 for shooting, exit-time and ODE tolerances
    High,
}

impl Precision {
    pub fn apply(self, train: &mut TrainConfig) {
        match self {
            Precision::Standard => {
                train.tol_lambda = 1e-4;
                train.tol_t = 1e-4;
            }
            Precision::High => {
                train.tol_lambda = 1e-8;
                train.tol_t = 1e-8;
                train.rtol = train.rtol.min(1e-8);
                train.atol = train.atol.min(1e-8);
            }
        }
    }
}
