//! Tabular autoregressive softmax policy and the toy verifier task.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::SimError;
use crate::trace::TokenTrace;

/// Autoregressive softmax policy over a small vocabulary.
///
/// The context is the last `context_order` tokens encoded as a base-vocab
/// integer; one logit row per context. Token 0 is the terminator, chosen
/// so it contributes nothing to the verifier's modular sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    vocab_size: usize,
    context_order: usize,
    logits: Vec<f64>,
    eos_token: u32,
}

impl ToyPolicy {
    /// Uniform policy (all logits zero).
    pub fn uniform(vocab_size: usize, context_order: usize) -> Self {
        let contexts = vocab_size.pow(context_order as u32);
        Self {
            vocab_size,
            context_order,
            logits: alloc::vec![0.0; contexts * vocab_size],
            eos_token: 0,
        }
    }

    /// Policy with logits drawn from a centered uniform of the given
    /// half-width; useful for randomized gradient checks.
    pub fn random(vocab_size: usize, context_order: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut policy = Self::uniform(vocab_size, context_order);
        for logit in policy.logits.iter_mut() {
            *logit = (rng.gen::<f64>() * 2.0 - 1.0) * scale;
        }
        policy
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn context_order(&self) -> usize {
        self.context_order
    }

    pub fn eos_token(&self) -> u32 {
        self.eos_token
    }

    pub fn context_count(&self) -> usize {
        self.logits.len() / self.vocab_size
    }

    pub fn param_count(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn max_abs_param(&self) -> f64 {
        self.logits.iter().fold(0.0, |acc, p| acc.max(p.abs()))
    }

    /// Initial context: the prompt token repeated through the window.
    pub fn initial_context(&self, prompt: u32) -> usize {
        let mut ctx = 0usize;
        for _ in 0..self.context_order {
            ctx = ctx * self.vocab_size + prompt as usize;
        }
        ctx
    }

    /// Slides the context window one token forward.
    pub fn advance_context(&self, ctx: usize, token: u32) -> usize {
        let base = self.vocab_size.pow(self.context_order as u32);
        (ctx * self.vocab_size + token as usize) % base
    }

    fn row(&self, ctx: usize) -> &[f64] {
        &self.logits[ctx * self.vocab_size..(ctx + 1) * self.vocab_size]
    }

    /// Log-softmax over the context's row.
    pub fn log_probs(&self, ctx: usize) -> Vec<f64> {
        let row = self.row(ctx);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let log_sum = crate::math::ln(row.iter().map(|&l| crate::math::exp(l - max)).sum::<f64>());
        row.iter().map(|&l| l - max - log_sum).collect()
    }

    pub fn log_prob(&self, ctx: usize, token: u32) -> f64 {
        self.log_probs(ctx)[token as usize]
    }

    /// Softmax probabilities over the context's row.
    pub fn probs(&self, ctx: usize) -> Vec<f64> {
        let row = self.row(ctx);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut exps: Vec<f64> = row.iter().map(|&l| crate::math::exp(l - max)).collect();
        let sum: f64 = exps.iter().sum();
        for e in exps.iter_mut() {
            *e /= sum;
        }
        exps
    }

    /// Conditional entropy of the context's distribution, in nats.
    pub fn entropy(&self, ctx: usize) -> f64 {
        self.probs(ctx)
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * crate::math::ln(p))
            .sum()
    }

    /// Inverse-CDF sample from the context's distribution.
    pub fn sample_token(&self, ctx: usize, rng: &mut impl Rng) -> u32 {
        let probs = self.probs(ctx);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (token, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return token as u32;
            }
        }
        (self.vocab_size - 1) as u32
    }
}

/// Binary rule-based verifier: success iff the sum of emitted token ids is
/// congruent to the target modulo the vocabulary size. The empty sum is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyTask {
    pub vocab_size: usize,
    pub target: u32,
}

impl ToyTask {
    pub fn mod_sum(vocab_size: usize, target: u32) -> Self {
        Self { vocab_size, target }
    }

    pub fn score(&self, tokens: &[u32]) -> f64 {
        let sum: u64 = tokens.iter().map(|&t| t as u64).sum();
        if sum % self.vocab_size as u64 == self.target as u64 {
            1.0
        } else {
            0.0
        }
    }
}

/// Samples a group of `g` responses from the policy for one prompt.
///
/// Each response runs until the terminator token or `max_len`; the
/// terminator, when sampled, is part of the response. `logp_old` and
/// `logp_new` both record the sampling policy; the verifier score is
/// attached immediately.
pub fn sample_group(
    policy: &ToyPolicy,
    task: &ToyTask,
    prompt: u32,
    g: usize,
    max_len: usize,
    rng: &mut impl Rng,
) -> Vec<TokenTrace> {
    let mut traces = Vec::with_capacity(g);
    for i in 0..g {
        let mut ctx = policy.initial_context(prompt);
        let mut tokens: Vec<u32> = Vec::new();
        let mut logp: Vec<f64> = Vec::new();
        for _ in 0..max_len {
            let token = policy.sample_token(ctx, rng);
            logp.push(policy.log_prob(ctx, token));
            tokens.push(token);
            if token == policy.eos_token() {
                break;
            }
            ctx = policy.advance_context(ctx, token);
        }
        let score = task.score(&tokens);
        let mask = alloc::vec![true; tokens.len()];
        let trace = TokenTrace::new(
            sample_label(prompt, i),
            format!("g{prompt}"),
            tokens,
            logp.clone(),
            logp,
            mask,
            score,
        )
        .expect("sampled log-probabilities are valid by construction");
        traces.push(trace);
    }
    traces
}

fn sample_label(prompt: u32, index: usize) -> String {
    format!("g{prompt}-r{index}")
}

/// Context index of every token position in a trace.
pub(crate) fn contexts_for(
    policy: &ToyPolicy,
    prompt: u32,
    tokens: &[u32],
) -> Result<Vec<usize>, SimError> {
    let mut ctx = policy.initial_context(prompt);
    let mut out = Vec::with_capacity(tokens.len());
    for (index, &token) in tokens.iter().enumerate() {
        if token as usize >= policy.vocab_size() {
            return Err(SimError::TokenOutOfVocab {
                index,
                token,
                vocab: policy.vocab_size(),
            });
        }
        out.push(ctx);
        ctx = policy.advance_context(ctx, token);
    }
    Ok(out)
}

/// Log-probabilities of a trace's tokens under the current policy,
/// replaying the contexts from the prompt.
pub fn recompute_logp(
    policy: &ToyPolicy,
    prompt: u32,
    trace: &TokenTrace,
) -> Result<Vec<f64>, SimError> {
    let contexts = contexts_for(policy, prompt, trace.tokens())?;
    Ok(contexts
        .iter()
        .zip(trace.tokens())
        .map(|(&ctx, &token)| policy.log_prob(ctx, token))
        .collect())
}
