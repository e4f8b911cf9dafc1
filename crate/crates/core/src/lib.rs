//! Causal Kalman filtering of token-level importance-sampling ratios.
//!
//! The crate models the per-token log IS ratio of an autoregressive policy
//! as a noisy observation of a latent local-level process and smooths it
//! online with a scalar Kalman filter. Around that core it provides the
//! surrogate objectives that consume the filtered ratios (PPO/GRPO-style
//! clipped losses, sequence-level and filtered variants), diagnostics that
//! quantify the temporal structure of off-policy deviation, and a small
//! tabular-policy training simulator with analytic, finite-difference
//! checkable gradients.
//!
//! The crate is `no_std`-compatible (`alloc` required): disable the default
//! `std` feature and enable `libm` for float math on bare-metal targets.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("ratio-forge-core requires either the `std` or `libm` feature");

extern crate alloc;

pub mod diagnostics;
pub mod error;
pub mod filter;
mod math;
pub mod objectives;
pub mod sim;
pub mod trace;

pub use error::{DiagnosticsError, FilterError, ObjectiveError, SimError, TraceError};
pub use filter::{FilterWeights, FilteredSeries, KalmanParams, SteadyState};
pub use trace::{LogRatioSeries, RatioSeries, TokenTrace};
