//! Surrogate objectives and per-token policy-gradient coefficients.
//!
//! Covers the clipped PPO token term, the group-relative advantage and
//! GRPO objective, the geometric-mean sequence ratio with its
//! constant-coefficient objective, and the clipped/unclipped objectives
//! over Kalman-filtered ratios, plus clip-fraction accounting.

use alloc::vec::Vec;

use crate::error::ObjectiveError;
use crate::math;
use crate::trace::{LogRatioSeries, RatioSeries};

/// Clipping offsets: the trust band is `[1 - eps_lo, 1 + eps_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    eps_lo: f64,
    eps_hi: f64,
}

impl ClipConfig {
    pub fn new(eps_lo: f64, eps_hi: f64) -> Result<Self, ObjectiveError> {
        let ok = eps_lo.is_finite()
            && eps_hi.is_finite()
            && eps_lo >= 0.0
            && eps_hi >= 0.0
            && 1.0 - eps_lo > 0.0;
        if !ok {
            return Err(ObjectiveError::InvalidClipConfig { eps_lo, eps_hi });
        }
        Ok(Self { eps_lo, eps_hi })
    }

    pub fn symmetric(eps: f64) -> Result<Self, ObjectiveError> {
        Self::new(eps, eps)
    }

    /// Symmetric 0.2 band, the conventional raw-ratio setting.
    pub fn grpo_default() -> Self {
        Self {
            eps_lo: 0.2,
            eps_hi: 0.2,
        }
    }

    /// Tight asymmetric band (3e-4, 4e-4) used with filtered and
    /// sequence-level ratios.
    pub fn filtered_default() -> Self {
        Self {
            eps_lo: 3e-4,
            eps_hi: 4e-4,
        }
    }

    pub fn eps_lo(&self) -> f64 {
        self.eps_lo
    }

    pub fn eps_hi(&self) -> f64 {
        self.eps_hi
    }

    pub fn lower(&self) -> f64 {
        1.0 - self.eps_lo
    }

    pub fn upper(&self) -> f64 {
        1.0 + self.eps_hi
    }

    pub fn clamp(&self, ratio: f64) -> f64 {
        ratio.clamp(self.lower(), self.upper())
    }
}

/// Group-relative advantages, one per response, shared by every token of
/// the response. Zero for every response when the group's scores carry no
/// information (zero standard deviation).
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    values: Vec<f64>,
    degenerate: bool,
}

impl AdvantageSet {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn group_size(&self) -> usize {
        self.values.len()
    }

    /// True when all scores in the group were equal.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

/// Normalizes verifier scores within a group: `(s_i - mean) / std` with the
/// population standard deviation. A zero-variance group yields all-zero
/// advantages with the degenerate flag set.
pub fn group_relative_advantage(scores: &[f64]) -> Result<AdvantageSet, ObjectiveError> {
    if scores.len() < 2 {
        return Err(ObjectiveError::GroupTooSmall { size: scores.len() });
    }
    for (index, &value) in scores.iter().enumerate() {
        if !value.is_finite() {
            return Err(ObjectiveError::NonFiniteScore { index, value });
        }
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let std = math::sqrt(var);
    if std == 0.0 {
        return Ok(AdvantageSet {
            values: alloc::vec![0.0; scores.len()],
            degenerate: true,
        });
    }
    Ok(AdvantageSet {
        values: scores.iter().map(|s| (s - mean) / std).collect(),
        degenerate: false,
    })
}

/// Geometric mean of the token ratios: `exp(mean of z over valid tokens)`.
pub fn sequence_ratio_geometric(z: &LogRatioSeries) -> Result<f64, ObjectiveError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (_, v) in z.iter_valid() {
        sum += v;
        n += 1;
    }
    if n == 0 {
        return Err(ObjectiveError::NoValidTokens { response: 0 });
    }
    Ok(math::exp(sum / n as f64))
}

/// One clipped-surrogate token term: the value and whether the clipped
/// branch strictly attained the min.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenTerm {
    pub value: f64,
    pub clipped: bool,
}

/// `min(r * A, clip(r, 1 - eps_lo, 1 + eps_hi) * A)`.
///
/// On an exact tie (ratio on a clip boundary, or inside the band where the
/// branches coincide) the unclipped branch counts as active.
pub fn clipped_surrogate_token(ratio: f64, advantage: f64, cfg: &ClipConfig) -> TokenTerm {
    let unclipped = ratio * advantage;
    let clipped = cfg.clamp(ratio) * advantage;
    if clipped < unclipped {
        TokenTerm {
            value: clipped,
            clipped: true,
        }
    } else {
        TokenTerm {
            value: unclipped,
            clipped: false,
        }
    }
}

/// Coefficient multiplying `grad log pi` in the token-level policy
/// gradient: `r * A` when the unclipped branch is active, 0 when the
/// clipped constant determines the term (no local gradient).
pub fn token_pg_coefficient(ratio: f64, advantage: f64, cfg: &ClipConfig) -> f64 {
    let term = clipped_surrogate_token(ratio, advantage, cfg);
    if term.clipped {
        0.0
    } else {
        ratio * advantage
    }
}

/// How per-token terms combine into the batch loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Mean over tokens within each response, then mean over responses
    /// (the "sequence-mean-token-mean" convention).
    #[default]
    SequenceMeanTokenMean,
    /// Single mean over all valid tokens in the batch.
    GlobalTokenMean,
}

/// Loss value, per-token terms grouped by response, and clip accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub loss: f64,
    /// Valid-token terms, one inner vector per response.
    pub per_token_terms: Vec<Vec<f64>>,
    pub clip_fraction: f64,
    pub token_count: usize,
    pub aggregation: Aggregation,
}

impl ObjectiveReport {
    /// Recomputes the loss from the stored terms under the stored
    /// aggregation; used to check report consistency.
    pub fn recompute_loss(&self) -> f64 {
        aggregate(&self.per_token_terms, self.aggregation)
    }
}

fn aggregate(terms: &[Vec<f64>], aggregation: Aggregation) -> f64 {
    match aggregation {
        Aggregation::SequenceMeanTokenMean => {
            let mut acc = 0.0;
            for seq in terms {
                acc += seq.iter().sum::<f64>() / seq.len() as f64;
            }
            acc / terms.len() as f64
        }
        Aggregation::GlobalTokenMean => {
            let total: f64 = terms.iter().flatten().sum();
            let count: usize = terms.iter().map(Vec::len).sum();
            total / count as f64
        }
    }
}

/// One group: per-response token series plus the group's advantages.
#[derive(Debug, Clone)]
pub struct RatioGroup<'a, S> {
    pub responses: &'a [S],
    pub advantages: &'a AdvantageSet,
}

fn check_group_shape(len: usize, advantages: &AdvantageSet) -> Result<(), ObjectiveError> {
    if advantages.group_size() != len {
        return Err(ObjectiveError::AdvantageCountMismatch {
            expected: len,
            actual: advantages.group_size(),
        });
    }
    Ok(())
}

fn build_report(
    terms: Vec<Vec<f64>>,
    clipped: usize,
    aggregation: Aggregation,
) -> Result<ObjectiveReport, ObjectiveError> {
    if terms.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let token_count: usize = terms.iter().map(Vec::len).sum();
    Ok(ObjectiveReport {
        loss: aggregate(&terms, aggregation),
        clip_fraction: clipped as f64 / token_count as f64,
        token_count,
        aggregation,
        per_token_terms: terms,
    })
}

/// GRPO objective over raw token ratios `r_t = exp(z_t)`.
pub fn grpo_objective(
    groups: &[RatioGroup<'_, LogRatioSeries>],
    cfg: &ClipConfig,
    aggregation: Aggregation,
) -> Result<ObjectiveReport, ObjectiveError> {
    let mut terms: Vec<Vec<f64>> = Vec::new();
    let mut clipped = 0usize;
    let mut response_index = 0usize;
    for group in groups {
        check_group_shape(group.responses.len(), group.advantages)?;
        for (z, &adv) in group.responses.iter().zip(group.advantages.values()) {
            let mut seq = Vec::new();
            for (_, value) in z.iter_valid() {
                let term = clipped_surrogate_token(math::exp(value), adv, cfg);
                if term.clipped {
                    clipped += 1;
                }
                seq.push(term.value);
            }
            if seq.is_empty() {
                return Err(ObjectiveError::NoValidTokens {
                    response: response_index,
                });
            }
            terms.push(seq);
            response_index += 1;
        }
    }
    build_report(terms, clipped, aggregation)
}

/// Clipped or unclipped objective over filtered ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KpoMode {
    Clipped,
    Unclipped,
}

/// Objective over filtered per-token ratios: the clipped mode applies the
/// asymmetric surrogate, the unclipped mode uses `r~_t * A` directly.
pub fn kpo_objective(
    groups: &[RatioGroup<'_, RatioSeries>],
    mode: KpoMode,
    cfg: &ClipConfig,
    aggregation: Aggregation,
) -> Result<ObjectiveReport, ObjectiveError> {
    let mut terms: Vec<Vec<f64>> = Vec::new();
    let mut clipped = 0usize;
    let mut response_index = 0usize;
    for group in groups {
        check_group_shape(group.responses.len(), group.advantages)?;
        for (ratios, &adv) in group.responses.iter().zip(group.advantages.values()) {
            let mut seq = Vec::new();
            for (index, ratio) in ratios.iter_valid() {
                if ratio <= 0.0 || !ratio.is_finite() {
                    return Err(ObjectiveError::NonPositiveRatio {
                        response: response_index,
                        index,
                        value: ratio,
                    });
                }
                match mode {
                    KpoMode::Clipped => {
                        let term = clipped_surrogate_token(ratio, adv, cfg);
                        if term.clipped {
                            clipped += 1;
                        }
                        seq.push(term.value);
                    }
                    KpoMode::Unclipped => seq.push(ratio * adv),
                }
            }
            if seq.is_empty() {
                return Err(ObjectiveError::NoValidTokens {
                    response: response_index,
                });
            }
            terms.push(seq);
            response_index += 1;
        }
    }
    build_report(terms, clipped, aggregation)
}

/// Objective where every token of a response shares the constant
/// geometric-mean ratio of the whole sequence.
///
/// The constant is treated as non-differentiable downstream: the
/// simulator's gradient path multiplies it against `grad log pi` without
/// differentiating through the mean.
pub fn sequence_level_objective(
    groups: &[RatioGroup<'_, LogRatioSeries>],
    cfg: &ClipConfig,
    aggregation: Aggregation,
) -> Result<ObjectiveReport, ObjectiveError> {
    let mut terms: Vec<Vec<f64>> = Vec::new();
    let mut clipped = 0usize;
    let mut response_index = 0usize;
    for group in groups {
        check_group_shape(group.responses.len(), group.advantages)?;
        for (z, &adv) in group.responses.iter().zip(group.advantages.values()) {
            let count = z.iter_valid().count();
            if count == 0 {
                return Err(ObjectiveError::NoValidTokens {
                    response: response_index,
                });
            }
            let rbar = sequence_ratio_geometric(z)?;
            let term = clipped_surrogate_token(rbar, adv, cfg);
            if term.clipped {
                clipped += count;
            }
            terms.push(alloc::vec![term.value; count]);
            response_index += 1;
        }
    }
    build_report(terms, clipped, aggregation)
}

/// Fraction of valid tokens whose surrogate term came from the clipped
/// branch.
pub fn clip_fraction(report: &ObjectiveReport) -> f64 {
    report.clip_fraction
}
