//! Desk-scale policy-optimization simulator.
//!
//! A tabular softmax policy over a small vocabulary generates responses
//! autoregressively; a modular-sum verifier scores them; group-relative
//! advantages feed the surrogate objectives; and plain gradient ascent
//! updates the table. The training loop mirrors the group-rollout /
//! off-policy-minibatch structure: each batch is sampled once, split into
//! minibatches, and every minibatch after the first is updated off-policy.
//!
//! Gradients are analytic and verified against central finite differences,
//! including the path through the Kalman filter (a fixed linear operator
//! on the log-ratios, so the chain rule runs through its weight table).

mod gradient;
mod policy;
mod train;

pub use gradient::{central_difference, finite_difference_check, BatchSnapshot, FD_DEFAULT_STEP};
pub use policy::{recompute_logp, sample_group, ToyPolicy, ToyTask};
pub use train::{run_training, run_training_with_rollouts};

use alloc::vec::Vec;

use crate::error::SimError;
use crate::filter::KalmanParams;
use crate::objectives::ClipConfig;

/// Which surrogate drives the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Raw token ratios in the clipped surrogate.
    Grpo,
    /// Constant geometric-mean sequence ratio per response (stop-gradient).
    SeqLevel,
    /// Kalman-filtered ratios in the clipped surrogate.
    KpoClipped,
    /// Kalman-filtered ratios times advantage, no clipping.
    KpoUnclipped,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Grpo => "grpo",
            Method::SeqLevel => "seq_level",
            Method::KpoClipped => "kpo_clipped",
            Method::KpoUnclipped => "kpo_unclipped",
        }
    }

    /// Clip band conventionally paired with the method's ratio scale.
    pub fn default_clip(&self) -> ClipConfig {
        match self {
            Method::Grpo => ClipConfig::grpo_default(),
            _ => ClipConfig::filtered_default(),
        }
    }
}

/// Whether gradients flow through the filter or treat the filtered ratio
/// as a constant coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Differentiate the filtered ratio via the filter's weight table.
    #[default]
    ThroughFilter,
    /// Freeze the filtered ratio; gradient flows only through the current
    /// token's log-probability.
    Detached,
}

/// Training-loop configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub group_size: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub context_order: usize,
    pub method: Method,
    pub gradient_mode: GradientMode,
    pub kalman: KalmanParams,
    pub clip: ClipConfig,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            minibatch_size: 8,
            group_size: 8,
            max_len: 32,
            vocab_size: 8,
            context_order: 1,
            method: Method::KpoClipped,
            gradient_mode: GradientMode::default(),
            kalman: KalmanParams::default(),
            clip: ClipConfig::filtered_default(),
            learning_rate: 0.05,
            steps: 300,
            seed: 42,
        }
    }
}

impl TrainConfig {
    /// Default configuration with the clip band matched to the method.
    pub fn for_method(method: Method) -> Self {
        Self {
            method,
            clip: method.default_clip(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        use alloc::string::ToString;
        if self.minibatch_size == 0 || !self.batch_size.is_multiple_of(self.minibatch_size) {
            return Err(SimError::InvalidConfig(
                "batch_size must be a positive multiple of minibatch_size".to_string(),
            ));
        }
        if self.group_size < 2 || !self.batch_size.is_multiple_of(self.group_size) {
            return Err(SimError::InvalidConfig(
                "batch_size must be a multiple of group_size >= 2".to_string(),
            ));
        }
        if self.vocab_size < 2 {
            return Err(SimError::InvalidConfig("vocab_size must be >= 2".to_string()));
        }
        if self.context_order == 0 {
            return Err(SimError::InvalidConfig("context_order must be >= 1".to_string()));
        }
        if self.max_len == 0 {
            return Err(SimError::InvalidConfig("max_len must be >= 1".to_string()));
        }
        if !self.learning_rate.is_finite() {
            return Err(SimError::InvalidConfig("learning_rate must be finite".to_string()));
        }
        // Parameter table must stay addressable.
        let contexts = (self.vocab_size as u64).checked_pow(self.context_order as u32);
        match contexts {
            Some(c) if c.checked_mul(self.vocab_size as u64).is_some() && c <= 1 << 24 => Ok(()),
            _ => Err(SimError::InvalidConfig(
                "vocab_size^context_order is too large".to_string(),
            )),
        }
    }
}

/// One training step's recorded metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub reward_mean: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub pg_loss: f64,
}

/// Per-step metric timeline of a training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainMetrics {
    pub records: Vec<StepRecord>,
}

impl TrainMetrics {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Population variance of pg_loss over the half-open step range.
    pub fn pg_loss_variance(&self, range: core::ops::Range<usize>) -> f64 {
        let slice: Vec<f64> = self.records[range].iter().map(|r| r.pg_loss).collect();
        crate::math::population_variance(&slice)
    }
}
