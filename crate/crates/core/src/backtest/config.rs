use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::error::{Error, Result};
use crate::forecasters::{ModelConfig, ModelKind};
use crate::series::{generate_prb_trace, load_trace, SplitSpec, TimeSeries, TraceGenConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSource {
    Generate(TraceGenConfig),
    File(PathBuf),
}

impl TraceSource {
    pub fn load(&self) -> Result<TimeSeries> {
        match self {
            TraceSource::Generate(cfg) => generate_prb_trace(cfg),
            TraceSource::File(path) => load_trace(path),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    /// Season of the MASE denominator.
    pub season_length: usize,
    /// Horizon step whose samples feed the histogram.
    pub histogram_step: usize,
    /// Test window whose samples feed the histogram.
    pub histogram_window: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            season_length: 96,
            histogram_step: 0,
            histogram_window: 0,
        }
    }
}

/// One experiment. The split's context length and horizon apply to every
/// model; per-model seeds are derived from `master_seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub master_seed: u64,
    pub trace: TraceSource,
    pub split: SplitSpec,
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parse TOML or JSON, chosen by file extension (`.json` is JSON,
    /// anything else TOML).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.models.is_empty() {
            return Err(Error::config("models", "at least one model is required"));
        }
        let mut seen = Vec::new();
        for m in &self.models {
            if seen.contains(&m.kind) {
                return Err(Error::config("models", format!("`{}` listed twice", m.kind)));
            }
            seen.push(m.kind);
        }
        if self.metrics.season_length == 0 {
            return Err(Error::config("metrics.season_length", "must be positive"));
        }
        if self.metrics.histogram_step >= self.split.horizon {
            return Err(Error::config("metrics.histogram_step", "must be below the horizon"));
        }
        if self.metrics.histogram_window >= self.split.test_windows {
            return Err(Error::config("metrics.histogram_window", "must index a test window"));
        }
        for m in self.resolved_models() {
            m.validate().map_err(|e| match e {
                Error::Config { field, reason } => Error::Config {
                    field: format!("models.{}.{field}", m.kind),
                    reason,
                },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Model configs with the split's sizes and the derived seeds filled in.
    pub fn resolved_models(&self) -> Vec<ModelConfig> {
        self.models
            .iter()
            .map(|m| ModelConfig {
                context_length: self.split.context_length,
                horizon: self.split.horizon,
                seed: derive_seed(self.master_seed, m.kind),
                ..m.clone()
            })
            .collect()
    }

    /// The documented standard experiment: the default synthetic trace,
    /// 192-step context, 48-step horizon and all five models.
    pub fn standard() -> Self {
        Self::from_toml(STANDARD_TOML).expect("bundled standard config parses")
    }

    pub fn has_model(&self, kind: ModelKind) -> bool {
        self.models.iter().any(|m| m.kind == kind)
    }
}

/// Bundled copy of `configs/standard.toml`.
pub const STANDARD_TOML: &str = include_str!("../../../../configs/standard.toml");
