//! Sampled responses and the per-token series derived from them.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::TraceError;

/// One sampled response: per-token log-probabilities under the behavior
/// (old) and updated policy, a validity mask, and the verifier score.
///
/// All per-token fields share one length `T >= 0`. Construction validates
/// the invariants: log-probabilities finite and `<= 0`, score in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTrace {
    sample_id: String,
    group_id: String,
    tokens: Vec<u32>,
    logp_old: Vec<f64>,
    logp_new: Vec<f64>,
    mask: Vec<bool>,
    score: f64,
}

impl TokenTrace {
    pub fn new(
        sample_id: String,
        group_id: String,
        tokens: Vec<u32>,
        logp_old: Vec<f64>,
        logp_new: Vec<f64>,
        mask: Vec<bool>,
        score: f64,
    ) -> Result<Self, TraceError> {
        let len = tokens.len();
        for (field, actual) in [
            ("logp_old", logp_old.len()),
            ("logp_new", logp_new.len()),
            ("mask", mask.len()),
        ] {
            if actual != len {
                return Err(TraceError::LengthMismatch {
                    field,
                    expected: len,
                    actual,
                });
            }
        }
        for (field, values) in [("logp_old", &logp_old), ("logp_new", &logp_new)] {
            for (index, &value) in values.iter().enumerate() {
                if !value.is_finite() || value > 0.0 {
                    return Err(TraceError::InvalidLogProb { field, index, value });
                }
            }
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(TraceError::ScoreOutOfRange { value: score });
        }
        Ok(Self {
            sample_id,
            group_id,
            tokens,
            logp_old,
            logp_new,
            mask,
            score,
        })
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    pub fn group_id(&self) -> &str {
        &self.group_id
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn logp_old(&self) -> &[f64] {
        &self.logp_old
    }

    pub fn logp_new(&self) -> &[f64] {
        &self.logp_new
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Same trace under different identifiers.
    pub fn with_ids(mut self, sample_id: String, group_id: String) -> Self {
        self.sample_id = sample_id;
        self.group_id = group_id;
        self
    }

    /// Replaces the updated-policy log-probabilities, e.g. after a gradient
    /// step changed the policy that produced this trace.
    pub fn set_logp_new(&mut self, logp_new: Vec<f64>) -> Result<(), TraceError> {
        if logp_new.len() != self.tokens.len() {
            return Err(TraceError::LengthMismatch {
                field: "logp_new",
                expected: self.tokens.len(),
                actual: logp_new.len(),
            });
        }
        for (index, &value) in logp_new.iter().enumerate() {
            if !value.is_finite() || value > 0.0 {
                return Err(TraceError::InvalidLogProb {
                    field: "logp_new",
                    index,
                    value,
                });
            }
        }
        self.logp_new = logp_new;
        Ok(())
    }

    /// Per-token raw IS ratios `r_t = exp(logp_new_t - logp_old_t)`.
    ///
    /// Masked positions carry 1 and must not be read.
    pub fn raw_ratios(&self) -> RatioSeries {
        let values = self
            .logp_new
            .iter()
            .zip(&self.logp_old)
            .zip(&self.mask)
            .map(|((n, o), &valid)| if valid { crate::math::exp(n - o) } else { 1.0 })
            .collect();
        RatioSeries {
            values,
            mask: self.mask.clone(),
        }
    }

    /// Per-token log IS ratios `z_t = logp_new_t - logp_old_t`.
    ///
    /// Masked positions carry 0 and must not be read.
    pub fn log_ratios(&self) -> LogRatioSeries {
        let values = self
            .logp_new
            .iter()
            .zip(&self.logp_old)
            .zip(&self.mask)
            .map(|((n, o), &valid)| if valid { n - o } else { 0.0 })
            .collect();
        LogRatioSeries {
            values,
            mask: self.mask.clone(),
        }
    }
}

/// Per-token log IS ratios with their validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRatioSeries {
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl LogRatioSeries {
    /// Builds a series from raw values; the mask length must match.
    pub fn new(values: Vec<f64>, mask: Vec<bool>) -> Result<Self, TraceError> {
        if mask.len() != values.len() {
            return Err(TraceError::LengthMismatch {
                field: "mask",
                expected: values.len(),
                actual: mask.len(),
            });
        }
        Ok(Self { values, mask })
    }

    /// Fully-valid series.
    pub fn dense(values: Vec<f64>) -> Self {
        let mask = alloc::vec![true; values.len()];
        Self { values, mask }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values at valid positions, in order.
    pub fn valid_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.mask)
            .filter_map(|(&v, &m)| m.then_some(v))
            .collect()
    }

    /// Iterator over (index, value) at valid positions.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .zip(&self.mask)
            .enumerate()
            .filter_map(|(i, (&v, &m))| m.then_some((i, v)))
    }
}

/// Per-token IS ratios in ratio space (strictly positive at valid positions).
///
/// Same layout as [`LogRatioSeries`]; produced either directly from raw
/// ratios or by exponentiating a filtered log-ratio series.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSeries {
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl RatioSeries {
    pub fn new(values: Vec<f64>, mask: Vec<bool>) -> Result<Self, TraceError> {
        if mask.len() != values.len() {
            return Err(TraceError::LengthMismatch {
                field: "mask",
                expected: values.len(),
                actual: mask.len(),
            });
        }
        Ok(Self { values, mask })
    }

    pub fn dense(values: Vec<f64>) -> Self {
        let mask = alloc::vec![true; values.len()];
        Self { values, mask }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn valid_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.mask)
            .filter_map(|(&v, &m)| m.then_some(v))
            .collect()
    }

    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .zip(&self.mask)
            .enumerate()
            .filter_map(|(i, (&v, &m))| m.then_some((i, v)))
    }

    /// Natural log of every valid ratio; masked positions carry 0.
    pub fn to_log(&self) -> LogRatioSeries {
        let values = self
            .values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { crate::math::ln(v) } else { 0.0 })
            .collect();
        LogRatioSeries {
            values,
            mask: self.mask.clone(),
        }
    }
}
