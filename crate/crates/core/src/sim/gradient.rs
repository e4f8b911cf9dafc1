//! Minibatch loss, analytic gradients, and the finite-difference oracle.
//!
//! A [`BatchSnapshot`] freezes everything the surrogate needs besides the
//! live policy: contexts, behavior log-probs, the log-probs at snapshot
//! time, advantages, and the method's ratio coefficients. Its `loss` is a
//! smooth function of the policy parameters (away from clip boundaries)
//! whose exact derivative `analytic_gradient` computes in closed form:
//!
//! - raw ratios differentiate through the current token's log-prob;
//! - sequence-level and detached-filter coefficients are constants times a
//!   live ratio factor anchored at the snapshot, so only the current
//!   token's log-prob carries gradient;
//! - through-filter mode differentiates the filtered ratio itself via the
//!   filter's weight table (gains are data-independent, so the filter is
//!   linear in the log-ratios).
//!
//! Tokens whose clipped branch is active contribute no gradient.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::SimError;
use crate::filter::{filter_weights, KalmanParams};
use crate::math;
use crate::objectives::{clipped_surrogate_token, sequence_ratio_geometric, ClipConfig};
use crate::trace::{LogRatioSeries, TokenTrace};

use super::policy::{contexts_for, ToyPolicy};
use super::{GradientMode, Method};

/// Default central-difference step.
pub const FD_DEFAULT_STEP: f64 = 1e-5;

/// Largest |posterior mean| the simulator will exponentiate.
const SIM_SATURATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone)]
enum MethodCoeff {
    /// Live token ratio against the behavior policy.
    Raw,
    /// Constant geometric-mean sequence ratio.
    SeqConst(f64),
    /// Constant filtered ratio per token.
    Detached(Vec<f64>),
    /// Filtered ratio differentiated through the weight table.
    Through {
        prior: Vec<f64>,
        rows: Vec<Vec<f64>>,
        rho0: f64,
    },
}

#[derive(Debug, Clone)]
struct ResponseSnapshot {
    contexts: Vec<usize>,
    tokens: Vec<u32>,
    logp_old: Vec<f64>,
    logp_snap: Vec<f64>,
    advantage: f64,
    coeff: MethodCoeff,
}

/// One minibatch frozen at the policy state it will be differentiated at.
#[derive(Debug, Clone)]
pub struct BatchSnapshot {
    responses: Vec<ResponseSnapshot>,
    clip: ClipConfig,
    unclipped: bool,
}

impl BatchSnapshot {
    /// Builds a snapshot of `(prompt, trace, advantage)` items under the
    /// given method. Every trace's `logp_new` must already be recomputed
    /// under `policy`; anything stale is a contract violation.
    pub fn build(
        policy: &ToyPolicy,
        items: &[(u32, &TokenTrace, f64)],
        method: Method,
        mode: GradientMode,
        kalman: &KalmanParams,
        clip: &ClipConfig,
    ) -> Result<Self, SimError> {
        let mut responses = Vec::with_capacity(items.len());
        for (response, &(prompt, trace, advantage)) in items.iter().enumerate() {
            let contexts = contexts_for(policy, prompt, trace.tokens())?;
            for (index, (&ctx, &token)) in contexts.iter().zip(trace.tokens()).enumerate() {
                let actual = policy.log_prob(ctx, token);
                if (actual - trace.logp_new()[index]).abs() > 1e-12 {
                    return Err(SimError::StaleLogp { response, index });
                }
            }
            let logp_old = trace.logp_old().to_vec();
            let logp_snap = trace.logp_new().to_vec();
            let z_snap: Vec<f64> = logp_snap
                .iter()
                .zip(&logp_old)
                .map(|(n, o)| n - o)
                .collect();
            let coeff = match method {
                Method::Grpo => MethodCoeff::Raw,
                Method::SeqLevel => {
                    let rbar = sequence_ratio_geometric(&LogRatioSeries::dense(z_snap))?;
                    MethodCoeff::SeqConst(rbar)
                }
                Method::KpoClipped | Method::KpoUnclipped => {
                    let mask = alloc::vec![true; z_snap.len()];
                    let weights = filter_weights(z_snap.len(), kalman, &mask)?;
                    let prior: Vec<f64> = weights.prior_weight().to_vec();
                    let rows: Vec<Vec<f64>> =
                        (0..z_snap.len()).map(|t| weights.row(t).to_vec()).collect();
                    match mode {
                        GradientMode::ThroughFilter => MethodCoeff::Through {
                            prior,
                            rows,
                            rho0: kalman.rho0(),
                        },
                        GradientMode::Detached => {
                            // Same linear operator as the through path so the
                            // two modes agree on values to the bit.
                            let rho0 = kalman.rho0();
                            let mut ratios = Vec::with_capacity(z_snap.len());
                            for t in 0..z_snap.len() {
                                let rho = prior[t] * rho0
                                    + rows[t]
                                        .iter()
                                        .zip(&z_snap)
                                        .map(|(w, z)| w * z)
                                        .sum::<f64>();
                                ratios.push(saturating_exp(t, rho)?);
                            }
                            MethodCoeff::Detached(ratios)
                        }
                    }
                }
            };
            responses.push(ResponseSnapshot {
                contexts,
                tokens: trace.tokens().to_vec(),
                logp_old,
                logp_snap,
                advantage,
                coeff,
            });
        }
        Ok(Self {
            responses,
            clip: *clip,
            unclipped: method == Method::KpoUnclipped,
        })
    }

    /// Sequence-mean-token-mean surrogate value under an arbitrary policy.
    pub fn loss(&self, policy: &ToyPolicy) -> f64 {
        let mut acc = 0.0;
        for resp in &self.responses {
            let ratios = resp.effective_ratios(policy);
            let mut seq = 0.0;
            for (&c, _) in ratios.iter().zip(&resp.tokens) {
                seq += self.term(c, resp.advantage);
            }
            acc += seq / resp.tokens.len() as f64;
        }
        acc / self.responses.len() as f64
    }

    fn term(&self, ratio: f64, advantage: f64) -> f64 {
        if self.unclipped {
            ratio * advantage
        } else {
            clipped_surrogate_token(ratio, advantage, &self.clip).value
        }
    }

    /// Exact gradient of [`Self::loss`] at the snapshot policy.
    pub fn analytic_gradient(&self, policy: &ToyPolicy) -> Vec<f64> {
        let vocab = policy.vocab_size();
        let mut grad = alloc::vec![0.0; policy.param_count()];
        let mut prob_cache: Vec<Option<Vec<f64>>> = alloc::vec![None; policy.context_count()];
        let n = self.responses.len() as f64;
        for resp in &self.responses {
            let t_len = resp.tokens.len();
            let norm = 1.0 / (n * t_len as f64);
            let active = resp.active_coefficients(self);
            // Per-source-token gradient coefficients.
            let mut source = alloc::vec![0.0; t_len];
            match &resp.coeff {
                MethodCoeff::Through { rows, .. } => {
                    for (t, &a) in active.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        for (s, &w) in rows[t].iter().enumerate() {
                            source[s] += a * w;
                        }
                    }
                }
                _ => source.copy_from_slice(&active),
            }
            for (s, &b) in source.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                let g = norm * b;
                let ctx = resp.contexts[s];
                let probs = prob_cache[ctx].get_or_insert_with(|| policy.probs(ctx));
                let row = &mut grad[ctx * vocab..(ctx + 1) * vocab];
                for (slot, &p) in row.iter_mut().zip(probs.iter()) {
                    *slot -= g * p;
                }
                row[resp.tokens[s] as usize] += g;
            }
        }
        grad
    }

    /// (clipped tokens, total tokens) at the snapshot point.
    pub fn clip_stats(&self) -> (usize, usize) {
        let mut clipped = 0usize;
        let mut total = 0usize;
        for resp in &self.responses {
            let ratios = resp.snapshot_ratios();
            total += ratios.len();
            if self.unclipped {
                continue;
            }
            for &c in &ratios {
                if clipped_surrogate_token(c, resp.advantage, &self.clip).clipped {
                    clipped += 1;
                }
            }
        }
        (clipped, total)
    }

    /// Rejects batches with an effective ratio within `margin` of a clip
    /// boundary, where finite differences would straddle the kink.
    pub fn boundary_check(&self, margin: f64) -> Result<(), SimError> {
        if self.unclipped {
            return Ok(());
        }
        let lower = self.clip.lower();
        let upper = self.clip.upper();
        for (response, resp) in self.responses.iter().enumerate() {
            for (index, &c) in resp.snapshot_ratios().iter().enumerate() {
                if (c - lower).abs() < margin || (c - upper).abs() < margin {
                    return Err(SimError::BoundaryToken {
                        response,
                        index,
                        ratio: c,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn response_count(&self) -> usize {
        self.responses.len()
    }
}

fn saturating_exp(index: usize, rho: f64) -> Result<f64, SimError> {
    if rho.abs() > SIM_SATURATION_BOUND {
        return Err(SimError::Filter(crate::error::FilterError::Saturated {
            index,
            value: rho,
            bound: SIM_SATURATION_BOUND,
        }));
    }
    Ok(math::exp(rho))
}

impl ResponseSnapshot {
    /// Effective per-token ratios under an arbitrary policy.
    fn effective_ratios(&self, policy: &ToyPolicy) -> Vec<f64> {
        let lp: Vec<f64> = self
            .contexts
            .iter()
            .zip(&self.tokens)
            .map(|(&ctx, &token)| policy.log_prob(ctx, token))
            .collect();
        match &self.coeff {
            MethodCoeff::Raw => lp
                .iter()
                .zip(&self.logp_old)
                .map(|(l, o)| math::exp(l - o))
                .collect(),
            MethodCoeff::SeqConst(rbar) => lp
                .iter()
                .zip(&self.logp_snap)
                .map(|(l, s)| rbar * math::exp(l - s))
                .collect(),
            MethodCoeff::Detached(ratios) => ratios
                .iter()
                .zip(lp.iter().zip(&self.logp_snap))
                .map(|(r, (l, s))| r * math::exp(l - s))
                .collect(),
            MethodCoeff::Through { prior, rows, rho0 } => {
                let z: Vec<f64> = lp.iter().zip(&self.logp_old).map(|(l, o)| l - o).collect();
                (0..z.len())
                    .map(|t| {
                        let rho = prior[t] * rho0
                            + rows[t].iter().zip(&z).map(|(w, zv)| w * zv).sum::<f64>();
                        math::exp(rho)
                    })
                    .collect()
            }
        }
    }

    /// Effective ratios at the snapshot point, without a policy pass.
    fn snapshot_ratios(&self) -> Vec<f64> {
        match &self.coeff {
            MethodCoeff::Raw => self
                .logp_snap
                .iter()
                .zip(&self.logp_old)
                .map(|(s, o)| math::exp(s - o))
                .collect(),
            MethodCoeff::SeqConst(rbar) => alloc::vec![*rbar; self.tokens.len()],
            MethodCoeff::Detached(ratios) => ratios.clone(),
            MethodCoeff::Through { prior, rows, rho0 } => {
                let z: Vec<f64> = self
                    .logp_snap
                    .iter()
                    .zip(&self.logp_old)
                    .map(|(s, o)| s - o)
                    .collect();
                (0..z.len())
                    .map(|t| {
                        let rho = prior[t] * rho0
                            + rows[t].iter().zip(&z).map(|(w, zv)| w * zv).sum::<f64>();
                        math::exp(rho)
                    })
                    .collect()
            }
        }
    }

    /// Per-token coefficient on the live ratio's gradient; zero where the
    /// clipped branch determines the term.
    fn active_coefficients(&self, batch: &BatchSnapshot) -> Vec<f64> {
        self.snapshot_ratios()
            .iter()
            .map(|&c| {
                if batch.unclipped {
                    c * self.advantage
                } else {
                    let term = clipped_surrogate_token(c, self.advantage, &batch.clip);
                    if term.clipped {
                        0.0
                    } else {
                        c * self.advantage
                    }
                }
            })
            .collect()
    }
}

/// Central finite differences of `f` at `point` along the given indices.
pub fn central_difference<F>(f: F, point: &[f64], h: f64, indices: &[usize]) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut work = point.to_vec();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let saved = work[i];
        work[i] = saved + h;
        let plus = f(&work);
        work[i] = saved - h;
        let minus = f(&work);
        work[i] = saved;
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// Compares the analytic gradient against central finite differences and
/// returns the max relative error `|analytic - numeric| / (|numeric| + 1e-8)`.
///
/// Checks every parameter when there are at most 128, otherwise a random
/// subset of 128. Batches with a ratio near a clip boundary are rejected
/// with a retry signal before any differencing.
pub fn finite_difference_check(
    policy: &ToyPolicy,
    snapshot: &BatchSnapshot,
    h: f64,
    rng: &mut impl Rng,
) -> Result<f64, SimError> {
    snapshot.boundary_check(10.0 * h)?;
    let analytic = snapshot.analytic_gradient(policy);
    let param_count = policy.param_count();
    let indices: Vec<usize> = if param_count <= 128 {
        (0..param_count).collect()
    } else {
        let mut pool: Vec<usize> = (0..param_count).collect();
        for i in 0..128 {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(128);
        pool
    };
    let eval = |params: &[f64]| {
        let mut probe = policy.clone();
        probe.logits_mut().copy_from_slice(params);
        snapshot.loss(&probe)
    };
    let numeric = central_difference(eval, policy.logits(), h, &indices);
    let mut max_rel = 0.0_f64;
    for (&i, &num) in indices.iter().zip(&numeric) {
        let rel = (analytic[i] - num).abs() / (num.abs() + 1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
