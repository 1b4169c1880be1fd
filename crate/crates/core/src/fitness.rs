//! The optimization objective: negative log-likelihood of the target code
//! split into a functionality part (benign tokens) and a vulnerability part
//! (planted tokens), combined with configurable weights.
//!
//! With one-hot targets, the per-token KL divergence and cross-entropy both
//! reduce to the token's negative logprob; the two loss parts stay separate
//! operations anyway, and tests assert their equality on identical spans.

use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{render, GenomeError, PromptGenome};
use crate::model::{ModelClient, ModelError, ScoredContinuation};
use crate::target::{label_tokens, SegmentKind, TargetCode, TargetError};

/// How the two loss parts are assembled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Weighted split objective over benign and vulnerable tokens.
    #[default]
    Split,
    /// Undifferentiated objective over every token; reported in `l_p` with
    /// `l_q` zero by convention.
    Vanilla,
}

/// Weights and shape of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub mode: LossMode,
    /// Average per token within each part instead of summing.
    #[serde(default)]
    pub average: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, mode: LossMode::Split, average: false }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), FitnessError> {
        if !self.alpha.is_finite() || !self.beta.is_finite() || self.alpha < 0.0 || self.beta < 0.0
        {
            return Err(FitnessError::InvalidWeights { alpha: self.alpha, beta: self.beta });
        }
        Ok(())
    }
}

/// One token's share of the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenContribution {
    pub token_index: usize,
    pub kind: SegmentKind,
    pub contribution: f64,
}

/// A fully decomposed loss value: `total = alpha * l_p + beta * l_q`, with
/// `l_p` the sum of benign contributions and `l_q` the sum of vulnerable
/// ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_p: f64,
    pub l_q: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub per_token: Vec<TokenContribution>,
}

#[derive(Debug, Error)]
pub enum FitnessError {
    #[error("loss weights alpha={alpha} beta={beta} are invalid")]
    InvalidWeights { alpha: f64, beta: f64 },
    #[error("labels ({labels}) do not align with scored tokens ({tokens})")]
    Alignment { labels: usize, tokens: usize },
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Negative log-likelihood of the whole continuation.
pub fn vanilla_loss(scored: &ScoredContinuation) -> f64 {
    scored.tokens.iter().map(|t| -t.logprob).sum()
}

/// Negative log-likelihood restricted to benign tokens.
pub fn functionality_loss(
    scored: &ScoredContinuation,
    labels: &[SegmentKind],
) -> Result<f64, FitnessError> {
    masked_loss(scored, labels, SegmentKind::Benign)
}

/// Negative log-likelihood restricted to vulnerable tokens.
pub fn vulnerability_loss(
    scored: &ScoredContinuation,
    labels: &[SegmentKind],
) -> Result<f64, FitnessError> {
    masked_loss(scored, labels, SegmentKind::Vulnerable)
}

fn masked_loss(
    scored: &ScoredContinuation,
    labels: &[SegmentKind],
    kind: SegmentKind,
) -> Result<f64, FitnessError> {
    if labels.len() != scored.tokens.len() {
        return Err(FitnessError::Alignment { labels: labels.len(), tokens: scored.tokens.len() });
    }
    Ok(scored
        .tokens
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == kind)
        .map(|(t, _)| -t.logprob)
        .sum())
}

/// Combines the two parts: `alpha * l_p + beta * l_q`.
pub fn combined_loss(l_p: f64, l_q: f64, weights: &LossWeights) -> Result<f64, FitnessError> {
    weights.validate()?;
    Ok(weights.alpha * l_p + weights.beta * l_q)
}

/// Builds the full breakdown from a scored continuation and its labels.
pub fn breakdown(
    scored: &ScoredContinuation,
    labels: &[SegmentKind],
    weights: &LossWeights,
) -> Result<LossBreakdown, FitnessError> {
    weights.validate()?;
    if labels.len() != scored.tokens.len() {
        return Err(FitnessError::Alignment { labels: labels.len(), tokens: scored.tokens.len() });
    }
    let (labels, alpha, beta): (Vec<SegmentKind>, f64, f64) = match weights.mode {
        LossMode::Split => (labels.to_vec(), weights.alpha, weights.beta),
        LossMode::Vanilla => (vec![SegmentKind::Benign; labels.len()], 1.0, 1.0),
    };
    let count = |kind: SegmentKind| labels.iter().filter(|l| **l == kind).count();
    let scale = |kind: SegmentKind| {
        if weights.average {
            1.0 / count(kind).max(1) as f64
        } else {
            1.0
        }
    };
    let benign_scale = scale(SegmentKind::Benign);
    let vulnerable_scale = scale(SegmentKind::Vulnerable);
    let per_token: Vec<TokenContribution> = scored
        .tokens
        .iter()
        .zip(&labels)
        .enumerate()
        .map(|(token_index, (t, kind))| TokenContribution {
            token_index,
            kind: *kind,
            contribution: -t.logprob
                * match kind {
                    SegmentKind::Benign => benign_scale,
                    SegmentKind::Vulnerable => vulnerable_scale,
                },
        })
        .collect();
    let part = |kind: SegmentKind| {
        per_token
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| c.contribution)
            .sum::<f64>()
    };
    let l_p = part(SegmentKind::Benign);
    let l_q = part(SegmentKind::Vulnerable);
    Ok(LossBreakdown { l_p, l_q, total: alpha * l_p + beta * l_q, alpha, beta, per_token })
}

/// Concurrent-safe memo of genome evaluations keyed by rendered prompt and
/// target text.
#[derive(Debug, Default)]
pub struct EvalCache {
    entries: DashMap<(String, String), LossBreakdown>,
}

impl EvalCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Scores the target under the rendered prompt and decomposes the loss,
/// reusing the cache for repeat evaluations so unchanged genomes (elites)
/// cost no backend calls.
pub async fn evaluate_genome(
    genome: &PromptGenome,
    task: &str,
    target: &TargetCode,
    client: &dyn ModelClient,
    weights: &LossWeights,
    cache: &EvalCache,
) -> Result<LossBreakdown, FitnessError> {
    weights.validate()?;
    let prompt = render(genome, task)?;
    let key = (prompt.clone(), target.code.clone());
    if let Some(hit) = cache.entries.get(&key) {
        return Ok(hit.clone());
    }
    let scored = client.score(&prompt, &target.code).await?;
    let labels = label_tokens(target, &scored)?;
    let result = breakdown(&scored, &labels, weights)?;
    cache.entries.insert(key, result.clone());
    Ok(result)
}
