//! Error types for the core algorithms.
//!
//! Hand-rolled enums so the crate stays `no_std`-friendly; everything
//! implements [`core::error::Error`].

use alloc::string::String;
use core::fmt;

/// Structural problems in a token trace.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceError {
    /// Two per-token fields disagree in length.
    LengthMismatch {
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    /// A log-probability is NaN, infinite, or positive.
    InvalidLogProb {
        field: &'static str,
        index: usize,
        value: f64,
    },
    /// Verifier score outside [0, 1].
    ScoreOutOfRange { value: f64 },
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceError::LengthMismatch {
                field,
                expected,
                actual,
            } => write!(f, "field `{field}` has length {actual}, expected {expected}"),
            TraceError::InvalidLogProb { field, index, value } => {
                write!(f, "field `{field}`[{index}] = {value} is not a finite log-probability <= 0")
            }
            TraceError::ScoreOutOfRange { value } => {
                write!(f, "score {value} outside [0, 1]")
            }
        }
    }
}

impl core::error::Error for TraceError {}

/// Invalid Kalman parameters or observations.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterError {
    /// Process noise must satisfy q >= 0.
    InvalidProcessNoise { q: f64 },
    /// Observation noise must satisfy v > 0.
    InvalidObservationNoise { v: f64 },
    /// Prior variance must satisfy p0 >= 0.
    InvalidPriorVariance { p0: f64 },
    /// Prior mean must be finite.
    InvalidPriorMean { rho0: f64 },
    /// q = 0 together with p0 = 0 freezes the filter at the prior; use
    /// [`KalmanParams::frozen`](crate::filter::KalmanParams::frozen) if that
    /// is intended.
    DegenerateParams,
    /// Observation is NaN or infinite.
    NonFiniteObservation { index: usize, value: f64 },
    /// A posterior mean exceeded the exponentiation guard.
    Saturated { index: usize, value: f64, bound: f64 },
    /// Mask length does not match the series length.
    MaskLengthMismatch { expected: usize, actual: usize },
}

impl fmt::Display for FilterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterError::InvalidProcessNoise { q } => {
                write!(f, "process noise q = {q} must be >= 0 and finite")
            }
            FilterError::InvalidObservationNoise { v } => {
                write!(f, "observation noise v = {v} must be > 0 and finite")
            }
            FilterError::InvalidPriorVariance { p0 } => {
                write!(f, "prior variance p0 = {p0} must be >= 0 and finite")
            }
            FilterError::InvalidPriorMean { rho0 } => {
                write!(f, "prior mean rho0 = {rho0} must be finite")
            }
            FilterError::DegenerateParams => write!(
                f,
                "q = 0 with p0 = 0 ignores all observations; construct via KalmanParams::frozen to opt in"
            ),
            FilterError::NonFiniteObservation { index, value } => {
                write!(f, "observation [{index}] = {value} is not finite")
            }
            FilterError::Saturated { index, value, bound } => write!(
                f,
                "posterior mean [{index}] = {value} exceeds the exponentiation bound +/-{bound}"
            ),
            FilterError::MaskLengthMismatch { expected, actual } => {
                write!(f, "mask has length {actual}, expected {expected}")
            }
        }
    }
}

impl core::error::Error for FilterError {}

/// Invalid objective inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveError {
    /// Group-relative advantages need at least two responses.
    GroupTooSmall { size: usize },
    /// A score is NaN or infinite.
    NonFiniteScore { index: usize, value: f64 },
    /// Clip offsets must keep the lower bound positive.
    InvalidClipConfig { eps_lo: f64, eps_hi: f64 },
    /// No responses to aggregate.
    EmptyBatch,
    /// A response contributed no valid tokens.
    NoValidTokens { response: usize },
    /// A filtered ratio must be strictly positive.
    NonPositiveRatio { response: usize, index: usize, value: f64 },
    /// Advantage count does not match the responses in the group.
    AdvantageCountMismatch { expected: usize, actual: usize },
}

impl fmt::Display for ObjectiveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveError::GroupTooSmall { size } => {
                write!(f, "group has {size} responses, need at least 2")
            }
            ObjectiveError::NonFiniteScore { index, value } => {
                write!(f, "score [{index}] = {value} is not finite")
            }
            ObjectiveError::InvalidClipConfig { eps_lo, eps_hi } => write!(
                f,
                "clip config (eps_lo = {eps_lo}, eps_hi = {eps_hi}) must satisfy eps_lo >= 0, eps_hi >= 0, 1 - eps_lo > 0"
            ),
            ObjectiveError::EmptyBatch => write!(f, "objective over an empty batch"),
            ObjectiveError::NoValidTokens { response } => {
                write!(f, "response {response} has no valid tokens")
            }
            ObjectiveError::NonPositiveRatio { response, index, value } => write!(
                f,
                "filtered ratio [{index}] = {value} in response {response} must be > 0"
            ),
            ObjectiveError::AdvantageCountMismatch { expected, actual } => {
                write!(f, "got {actual} advantages for {expected} responses")
            }
        }
    }
}

impl core::error::Error for ObjectiveError {}

/// Invalid diagnostics inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum DiagnosticsError {
    /// Spectral analysis needs at least one sample.
    EmptySeries,
    /// The cutoff index must satisfy k_c <= floor(T / 2).
    CutoffOutOfRange { k_c: usize, len: usize },
    /// Window length must be >= 1.
    InvalidWindow { window: usize },
    /// Paired series disagree in length or mask.
    SeriesMismatch { index: usize },
}

impl fmt::Display for DiagnosticsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiagnosticsError::EmptySeries => write!(f, "series is empty"),
            DiagnosticsError::CutoffOutOfRange { k_c, len } => {
                write!(f, "cutoff k_c = {k_c} exceeds floor({len}/2)")
            }
            DiagnosticsError::InvalidWindow { window } => {
                write!(f, "window length {window} must be >= 1")
            }
            DiagnosticsError::SeriesMismatch { index } => {
                write!(f, "raw and filtered series {index} disagree in length or mask")
            }
        }
    }
}

impl core::error::Error for DiagnosticsError {}

/// Simulator failures.
#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    /// Token id outside the policy vocabulary.
    TokenOutOfVocab { index: usize, token: u32, vocab: usize },
    /// Training halted because a parameter magnitude crossed the guard.
    Diverged { step: usize, max_param: f64 },
    /// Invalid training configuration.
    InvalidConfig(String),
    /// An effective ratio sits on a clip boundary; re-sample and retry.
    BoundaryToken { response: usize, index: usize, ratio: f64 },
    /// `logp_new` was not recomputed under the current policy.
    StaleLogp { response: usize, index: usize },
    /// Objective-layer failure inside the simulator.
    Objective(ObjectiveError),
    /// Filter-layer failure inside the simulator.
    Filter(FilterError),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::TokenOutOfVocab { index, token, vocab } => {
                write!(f, "token [{index}] = {token} outside vocabulary of size {vocab}")
            }
            SimError::Diverged { step, max_param } => write!(
                f,
                "training diverged at step {step}: max |parameter| = {max_param} exceeds 1e6"
            ),
            SimError::InvalidConfig(msg) => write!(f, "invalid training config: {msg}"),
            SimError::BoundaryToken { response, index, ratio } => write!(
                f,
                "effective ratio {ratio} at response {response}, token {index} lies on a clip boundary"
            ),
            SimError::StaleLogp { response, index } => write!(
                f,
                "logp_new at response {response}, token {index} differs from the current policy; recompute before taking gradients"
            ),
            SimError::Objective(e) => write!(f, "objective error: {e}"),
            SimError::Filter(e) => write!(f, "filter error: {e}"),
        }
    }
}

impl core::error::Error for SimError {}

impl From<ObjectiveError> for SimError {
    fn from(e: ObjectiveError) -> Self {
        SimError::Objective(e)
    }
}

impl From<FilterError> for SimError {
    fn from(e: FilterError) -> Self {
        SimError::Filter(e)
    }
}
