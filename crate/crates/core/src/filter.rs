//! Scalar causal Kalman filter over log IS ratios.
//!
//! The latent per-token log-ratio follows a random walk with process-noise
//! variance `q`; the observed log-ratio adds measurement noise with
//! variance `v`. Filtering runs strictly left to right: the estimate at
//! token `t` depends only on observations up to `t`, matching the
//! autoregressive order in which tokens are produced.
//!
//! Gains depend only on the noise parameters and the prior variance, never
//! on the data, so the filter is a fixed causal linear operator on the
//! observation sequence. [`FilterWeights`] materializes that operator; it
//! doubles as an independent oracle for the recursion and as the gradient
//! path through the filter.

use alloc::vec::Vec;

use crate::error::FilterError;
use crate::math;
use crate::trace::{LogRatioSeries, RatioSeries};

/// Default guard on |posterior mean| before exponentiation back to ratio
/// space. exp(30) ~ 1e13 already dwarfs any meaningful IS ratio.
pub const DEFAULT_SATURATION_BOUND: f64 = 30.0;

/// Noise and prior parameters of the scalar filter.
///
/// Defaults follow the clipped-variant training setup: `q = 1e-6`, `v = 1`,
/// prior mean 0 (first token treated as on-policy), prior variance 1 so the
/// first gain is moderate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanParams {
    q: f64,
    v: f64,
    rho0: f64,
    p0: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            q: 1e-6,
            v: 1.0,
            rho0: 0.0,
            p0: 1.0,
        }
    }
}

impl KalmanParams {
    /// Validates `q >= 0`, `v > 0`, `p0 >= 0`, finite `rho0`, and rejects
    /// the degenerate `q = 0 && p0 = 0` pair (see [`KalmanParams::frozen`]).
    pub fn new(q: f64, v: f64, rho0: f64, p0: f64) -> Result<Self, FilterError> {
        if !q.is_finite() || q < 0.0 {
            return Err(FilterError::InvalidProcessNoise { q });
        }
        if !v.is_finite() || v <= 0.0 {
            return Err(FilterError::InvalidObservationNoise { v });
        }
        if !p0.is_finite() || p0 < 0.0 {
            return Err(FilterError::InvalidPriorVariance { p0 });
        }
        if !rho0.is_finite() {
            return Err(FilterError::InvalidPriorMean { rho0 });
        }
        if q == 0.0 && p0 == 0.0 {
            return Err(FilterError::DegenerateParams);
        }
        Ok(Self { q, v, rho0, p0 })
    }

    /// Explicitly degenerate filter (`q = 0`, `p0 = 0`): every gain is zero
    /// and the output is `rho0` forever. Useful as a stop-everything
    /// baseline; never constructed implicitly.
    pub fn frozen(rho0: f64) -> Result<Self, FilterError> {
        if !rho0.is_finite() {
            return Err(FilterError::InvalidPriorMean { rho0 });
        }
        Ok(Self {
            q: 0.0,
            v: 1.0,
            rho0,
            p0: 0.0,
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    /// Initial filter state `(rho0, p0)`.
    pub fn initial_state(&self) -> KalmanState {
        KalmanState {
            rho: self.rho0,
            p: self.p0,
        }
    }
}

/// Posterior mean and variance carried between steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub rho: f64,
    pub p: f64,
}

/// Per-token output of one predict/update cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub rho_post: f64,
    pub p_post: f64,
    pub gain: f64,
    pub innovation: f64,
}

/// One predict/gain/update cycle of the scalar filter.
///
/// Prediction carries the state forward (`p_pred = p + q`), the innovation
/// is the observation minus the prediction, the gain blends them
/// (`k = p_pred / (p_pred + v)`), and the update applies the linear
/// correction with variance shrink `(1 - k) * p_pred`.
pub fn kalman_step(
    state: KalmanState,
    z: f64,
    params: &KalmanParams,
) -> Result<(KalmanState, StepOutput), FilterError> {
    if !z.is_finite() {
        return Err(FilterError::NonFiniteObservation { index: 0, value: z });
    }
    let p_pred = state.p + params.q;
    let innovation = z - state.rho;
    let gain = p_pred / (p_pred + params.v);
    let rho_post = state.rho + gain * innovation;
    let p_post = (1.0 - gain) * p_pred;
    Ok((
        KalmanState {
            rho: rho_post,
            p: p_post,
        },
        StepOutput {
            rho_post,
            p_post,
            gain,
            innovation,
        },
    ))
}

/// Filter outputs for a whole sequence.
///
/// Masked positions carry zeros in every field and must not be read; the
/// mask mirrors the input. The filter state does not advance across
/// masked positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredSeries {
    rho_post: Vec<f64>,
    p_post: Vec<f64>,
    gain: Vec<f64>,
    innovation: Vec<f64>,
    mask: Vec<bool>,
}

impl FilteredSeries {
    pub fn rho_post(&self) -> &[f64] {
        &self.rho_post
    }

    pub fn p_post(&self) -> &[f64] {
        &self.p_post
    }

    pub fn gain(&self) -> &[f64] {
        &self.gain
    }

    pub fn innovation(&self) -> &[f64] {
        &self.innovation
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.rho_post.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho_post.is_empty()
    }

    /// Mean gain over valid positions; 0 when there are none.
    pub fn mean_gain(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (&g, &m) in self.gain.iter().zip(&self.mask) {
            if m {
                sum += g;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Maps the posterior means back to ratio space with the default
    /// exponentiation guard.
    pub fn to_ratio_space(&self) -> Result<RatioSeries, FilterError> {
        self.to_ratio_space_with_bound(DEFAULT_SATURATION_BOUND)
    }

    /// Maps the posterior means back to ratio space: `r~_t = exp(rho_t)` at
    /// valid positions, 1 at masked positions. A posterior mean with
    /// `|rho_t| > bound` is a saturation error, never a silent infinity.
    pub fn to_ratio_space_with_bound(&self, bound: f64) -> Result<RatioSeries, FilterError> {
        let mut values = Vec::with_capacity(self.rho_post.len());
        for (index, (&rho, &valid)) in self.rho_post.iter().zip(&self.mask).enumerate() {
            if !valid {
                values.push(1.0);
                continue;
            }
            if rho.abs() > bound {
                return Err(FilterError::Saturated {
                    index,
                    value: rho,
                    bound,
                });
            }
            values.push(math::exp(rho));
        }
        Ok(RatioSeries::new(values, self.mask.clone()).expect("mask length matches by construction"))
    }
}

/// Runs the filter left to right over the valid positions of `z`.
///
/// Masked positions produce zeroed outputs and do not advance the state;
/// an empty input yields an empty output.
pub fn kalman_filter_sequence(
    z: &LogRatioSeries,
    params: &KalmanParams,
) -> Result<FilteredSeries, FilterError> {
    let len = z.len();
    let mut out = FilteredSeries {
        rho_post: alloc::vec![0.0; len],
        p_post: alloc::vec![0.0; len],
        gain: alloc::vec![0.0; len],
        innovation: alloc::vec![0.0; len],
        mask: z.mask().to_vec(),
    };
    let mut state = params.initial_state();
    for (index, value) in z.iter_valid() {
        if !value.is_finite() {
            return Err(FilterError::NonFiniteObservation { index, value });
        }
        let (next, step) = kalman_step(state, value, params)?;
        state = next;
        out.rho_post[index] = step.rho_post;
        out.p_post[index] = step.p_post;
        out.gain[index] = step.gain;
        out.innovation[index] = step.innovation;
    }
    Ok(out)
}

/// The filter recursion unrolled into an explicit causal linear operator.
///
/// For valid positions, the posterior mean is the convex combination
/// `rho_t = w_prior[t] * rho0 + sum_{s <= t} w[t][s] * z_s` where
/// `w[t][s] = K_s * prod_{u in (s, t]} (1 - K_u)` over valid positions and
/// `w_prior[t]` is the remaining mass. Rows at masked positions are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterWeights {
    prior_weight: Vec<f64>,
    obs_weights: Vec<Vec<f64>>,
    mask: Vec<bool>,
    rho0: f64,
}

impl FilterWeights {
    pub fn prior_weight(&self) -> &[f64] {
        &self.prior_weight
    }

    /// Row `t`: weights on observations `z_0..=z_t` (zero at masked columns
    /// and strictly zero beyond `t`).
    pub fn row(&self, t: usize) -> &[f64] {
        &self.obs_weights[t]
    }

    pub fn len(&self) -> usize {
        self.prior_weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prior_weight.is_empty()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Applies the operator to an observation series, reproducing
    /// [`kalman_filter_sequence`]'s posterior means. Masked positions
    /// yield 0 to mirror the recursion's output layout.
    pub fn apply(&self, z: &LogRatioSeries) -> Result<Vec<f64>, FilterError> {
        if z.len() != self.len() {
            return Err(FilterError::MaskLengthMismatch {
                expected: self.len(),
                actual: z.len(),
            });
        }
        let values = z.values();
        let mut out = alloc::vec![0.0; self.len()];
        for (t, slot) in out.iter_mut().enumerate() {
            if !self.mask[t] {
                continue;
            }
            let mut acc = self.prior_weight[t] * self.rho0;
            for (s, &w) in self.obs_weights[t].iter().enumerate() {
                if w != 0.0 {
                    acc += w * values[s];
                }
            }
            *slot = acc;
        }
        Ok(out)
    }
}

/// Computes the unrolled weight table for a sequence of the given length
/// and validity mask. Gains are data-independent, so this depends only on
/// the parameters and the mask.
pub fn filter_weights(
    len: usize,
    params: &KalmanParams,
    mask: &[bool],
) -> Result<FilterWeights, FilterError> {
    if mask.len() != len {
        return Err(FilterError::MaskLengthMismatch {
            expected: len,
            actual: mask.len(),
        });
    }
    let mut prior_weight = alloc::vec![0.0; len];
    let mut obs_weights: Vec<Vec<f64>> = Vec::with_capacity(len);
    for t in 0..len {
        obs_weights.push(alloc::vec![0.0; t + 1]);
    }

    // Row for the current valid prefix, updated in place: appending a valid
    // token with gain k scales every existing weight by (1 - k) and puts k
    // on the new observation.
    let mut running_prior = 1.0;
    let mut running_obs: Vec<(usize, f64)> = Vec::new();
    let mut p = params.p0;
    for t in 0..len {
        if !mask[t] {
            continue;
        }
        let p_pred = p + params.q;
        let gain = p_pred / (p_pred + params.v);
        p = (1.0 - gain) * p_pred;

        running_prior *= 1.0 - gain;
        for w in running_obs.iter_mut() {
            w.1 *= 1.0 - gain;
        }
        running_obs.push((t, gain));

        prior_weight[t] = running_prior;
        for &(s, w) in &running_obs {
            obs_weights[t][s] = w;
        }
    }
    Ok(FilterWeights {
        prior_weight,
        obs_weights,
        mask: mask.to_vec(),
        rho0: params.rho0,
    })
}

/// Steady-state prediction variance and gain of the recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    pub p_pred: f64,
    pub gain: f64,
}

/// Unique nonnegative fixed point of the variance recursion:
/// `P = (Q + sqrt(Q^2 + 4 Q V)) / 2`, `K = P / (P + V)`.
///
/// `q = 0` freezes the filter (`P = 0`, `K = 0`). The ratio `q / v` sets
/// the smoothing/tracking trade-off this gain encodes.
pub fn steady_state(params: &KalmanParams) -> SteadyState {
    let q = params.q;
    let v = params.v;
    let p_pred = 0.5 * (q + math::sqrt(q * q + 4.0 * q * v));
    SteadyState {
        p_pred,
        gain: p_pred / (p_pred + v),
    }
}
