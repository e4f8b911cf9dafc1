//! Run configuration: TOML file, environment fallback, and flag precedence.
//!
//! Precedence, highest first: command-line flags, then the config file
//! (`--config`, falling back to the `RATIO_FORGE_CONFIG` environment
//! variable), then built-in defaults. Missing keys take defaults; unknown
//! keys are hard errors so typos never pass silently.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use ratio_forge_core::filter::KalmanParams;
use ratio_forge_core::objectives::{Aggregation, ClipConfig};
use ratio_forge_core::sim::{GradientMode, Method, TrainConfig};

pub const CONFIG_ENV_VAR: &str = "RATIO_FORGE_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Covers both syntax errors and unknown keys; toml reports the
    /// offending line, column, and key.
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct KalmanSection {
    pub q: Option<f64>,
    pub v: Option<f64>,
    pub rho0: Option<f64>,
    pub p0: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ClipSection {
    pub eps_lo: Option<f64>,
    pub eps_hi: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub window: Option<usize>,
    pub kc: Option<usize>,
    /// "ratio" (default) or "log".
    pub representation: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub batch_size: Option<usize>,
    pub minibatch_size: Option<usize>,
    pub group_size: Option<usize>,
    pub max_len: Option<usize>,
    pub vocab_size: Option<usize>,
    pub context_order: Option<usize>,
    pub method: Option<String>,
    pub gradient_mode: Option<String>,
    pub learning_rate: Option<f64>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
}

/// Parsed configuration file; every field optional.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub kalman: KalmanSection,
    pub clip: ClipSection,
    pub diagnostics: DiagnosticsSection,
    pub sim: SimSection,
}

/// Loads and parses a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Resolves the effective config: explicit `--config` path, then the
/// `RATIO_FORGE_CONFIG` environment variable, then empty defaults.
pub fn resolve_config(explicit: Option<&Path>) -> Result<RunConfig, ConfigError> {
    if let Some(path) = explicit {
        return load_config(path);
    }
    if let Ok(env_path) = std::env::var(CONFIG_ENV_VAR) {
        if !env_path.is_empty() {
            return load_config(Path::new(&env_path));
        }
    }
    Ok(RunConfig::default())
}

/// Numeric flag overrides shared by the subcommands.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub q: Option<f64>,
    pub v: Option<f64>,
    pub rho0: Option<f64>,
    pub p0: Option<f64>,
    pub eps_lo: Option<f64>,
    pub eps_hi: Option<f64>,
    pub window: Option<usize>,
    pub kc: Option<usize>,
}

impl RunConfig {
    /// Kalman parameters after flag overrides; defaults q = 1e-6, v = 1,
    /// rho0 = 0, p0 = 1.
    pub fn kalman_params(&self, over: &Overrides) -> Result<KalmanParams, ConfigError> {
        let defaults = KalmanParams::default();
        KalmanParams::new(
            over.q.or(self.kalman.q).unwrap_or(defaults.q()),
            over.v.or(self.kalman.v).unwrap_or(defaults.v()),
            over.rho0.or(self.kalman.rho0).unwrap_or(defaults.rho0()),
            over.p0.or(self.kalman.p0).unwrap_or(defaults.p0()),
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Clip band after flag overrides, defaulting per band kind.
    pub fn clip_config(
        &self,
        over: &Overrides,
        default: ClipConfig,
    ) -> Result<ClipConfig, ConfigError> {
        ClipConfig::new(
            over.eps_lo.or(self.clip.eps_lo).unwrap_or(default.eps_lo()),
            over.eps_hi.or(self.clip.eps_hi).unwrap_or(default.eps_hi()),
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn window(&self, over: &Overrides) -> usize {
        over.window.or(self.diagnostics.window).unwrap_or(50)
    }

    /// None means the per-sample default `floor(T / 20)`.
    pub fn kc(&self, over: &Overrides) -> Option<usize> {
        over.kc.or(self.diagnostics.kc)
    }

    /// Training config after flag overrides. The clip band defaults to the
    /// method's conventional setting unless configured or overridden.
    pub fn train_config(
        &self,
        over: &Overrides,
        method_flag: Option<&str>,
        steps: Option<usize>,
        seed: Option<u64>,
    ) -> Result<TrainConfig, ConfigError> {
        let method = match method_flag.or(self.sim.method.as_deref()) {
            None => Method::KpoClipped,
            Some(name) => parse_method(name)?,
        };
        let gradient_mode = match self.sim.gradient_mode.as_deref() {
            None => GradientMode::ThroughFilter,
            Some("through_filter") => GradientMode::ThroughFilter,
            Some("detached") => GradientMode::Detached,
            Some(other) => {
                return Err(ConfigError::Invalid(format!(
                    "unknown gradient_mode `{other}` (expected through_filter or detached)"
                )))
            }
        };
        let base = TrainConfig::for_method(method);
        Ok(TrainConfig {
            batch_size: self.sim.batch_size.unwrap_or(base.batch_size),
            minibatch_size: self.sim.minibatch_size.unwrap_or(base.minibatch_size),
            group_size: self.sim.group_size.unwrap_or(base.group_size),
            max_len: self.sim.max_len.unwrap_or(base.max_len),
            vocab_size: self.sim.vocab_size.unwrap_or(base.vocab_size),
            context_order: self.sim.context_order.unwrap_or(base.context_order),
            method,
            gradient_mode,
            kalman: self.kalman_params(over)?,
            clip: self.clip_config(over, method.default_clip())?,
            learning_rate: self.sim.learning_rate.unwrap_or(base.learning_rate),
            steps: steps.or(self.sim.steps).unwrap_or(base.steps),
            seed: seed.or(self.sim.seed).unwrap_or(base.seed),
        })
    }
}

pub fn parse_method(name: &str) -> Result<Method, ConfigError> {
    match name {
        "grpo" => Ok(Method::Grpo),
        "seq_level" => Ok(Method::SeqLevel),
        "kpo_clipped" => Ok(Method::KpoClipped),
        "kpo_unclipped" => Ok(Method::KpoUnclipped),
        other => Err(ConfigError::Invalid(format!(
            "unknown method `{other}` (expected grpo, seq_level, kpo_clipped, or kpo_unclipped)"
        ))),
    }
}

pub fn parse_aggregation(name: &str) -> Result<Aggregation, ConfigError> {
    match name {
        "sequence_mean_token_mean" => Ok(Aggregation::SequenceMeanTokenMean),
        "global_token_mean" => Ok(Aggregation::GlobalTokenMean),
        other => Err(ConfigError::Invalid(format!(
            "unknown aggregation `{other}` (expected sequence_mean_token_mean or global_token_mean)"
        ))),
    }
}
