//! Run configuration: one JSON document drives every subcommand.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use projlm_core::diagnostics::Centering;
use projlm_core::engine::Distribution;
use projlm_core::model::{EquationSpec, TruncationPolicy};
use projlm_core::solvability::MomentParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spec: EquationSpec,
    #[serde(default = "default_len")]
    pub n: usize,
    /// Truncation level.
    #[serde(default = "default_len")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub distribution: Distribution,
    #[serde(default)]
    pub truncation: TruncationPolicy,
    #[serde(default)]
    pub moments: Option<MomentParams>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_len() -> usize {
    1000
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Defaults to the largest fit lag, capped below `n / 4`.
    pub acf_max_lag: Option<usize>,
    /// Defaults to twelve geometric lags between `n^0.3` and `n^0.7`.
    pub fit_lags: Option<Vec<usize>>,
    /// Defaults to ten geometric sizes between 10 and `n / 8`.
    pub block_sizes: Option<Vec<usize>>,
    pub bins: usize,
    pub centering: Centering,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            acf_max_lag: None,
            fit_lags: None,
            block_sizes: None,
            bins: 40,
            centering: Centering::Sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub window: usize,
    pub trials: usize,
    /// Draw a fresh random Family I equation per trial instead of using `spec`.
    pub random_specs: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            window: 8,
            trials: 50,
            random_specs: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Binary,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).context("malformed config")?;
        cfg.spec.validate().context("invalid spec in config")?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
