//! The victim-model abstraction: teacher-forced scoring of a fixed
//! continuation and free-running sampling, exposed as one async trait so toy
//! and HTTP backends interchange freely.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One scored token of a continuation. `start..end` are byte offsets into
/// the continuation text; `logprob` is the natural-log probability the model
/// assigned to this token given everything before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub logprob: f64,
}

/// A continuation scored token by token under teacher forcing. Token spans
/// are contiguous, in order, and cover the text exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredContinuation {
    pub continuation_text: String,
    pub tokens: Vec<ScoredToken>,
}

impl ScoredContinuation {
    /// Sum of all token logprobs.
    pub fn total_logprob(&self) -> f64 {
        self.tokens.iter().map(|t| t.logprob).sum()
    }
}

/// Decoding controls for `generate`. A temperature of zero means greedy
/// decoding regardless of the truncation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub n: usize,
    pub max_tokens: usize,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { n: 1, max_tokens: 64, temperature: 0.0, top_p: 1.0, top_k: None, seed: None }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n == 0 || self.max_tokens == 0 {
            return Err(ModelError::InvalidParams("n and max_tokens must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ModelError::InvalidParams("temperature must be finite and >= 0".into()));
        }
        if !self.top_p.is_finite() || self.top_p <= 0.0 || self.top_p > 1.0 {
            return Err(ModelError::InvalidParams("top_p must lie in (0, 1]".into()));
        }
        if self.top_k == Some(0) {
            return Err(ModelError::InvalidParams("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("backend unreachable: {0}")]
    Transport(String),
    #[error("cannot tokenize input: {0}")]
    Tokenization(String),
    #[error("word not in model vocabulary: {0:?}")]
    Vocab(String),
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error("backend rejected the request: {0}")]
    Backend(String),
}

/// A code model the attack can query: teacher-forced scoring and sampling.
#[async_trait]
pub trait ModelClient: Send + Sync {
    /// Scores `continuation` token by token as a forced completion of
    /// `prompt`.
    async fn score(&self, prompt: &str, continuation: &str)
        -> Result<ScoredContinuation, ModelError>;

    /// Samples `params.n` completions of `prompt`.
    async fn generate(&self, prompt: &str, params: &SamplingParams)
        -> Result<Vec<String>, ModelError>;
}

/// Checks the span invariant: tokens contiguous, ordered, covering the text.
pub fn spans_cover_text(scored: &ScoredContinuation) -> bool {
    let mut cursor = 0;
    for t in &scored.tokens {
        if t.start != cursor || t.end < t.start || t.end > scored.continuation_text.len() {
            return false;
        }
        if scored.continuation_text.get(t.start..t.end) != Some(t.text.as_str()) {
            return false;
        }
        cursor = t.end;
    }
    cursor == scored.continuation_text.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params_are_greedy_single_sample() {
        let p = SamplingParams::default();
        assert_eq!(p.n, 1);
        assert_eq!(p.temperature, 0.0);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn validate_rejects_bad_params() {
        let bad = |f: fn(&mut SamplingParams)| {
            let mut p = SamplingParams::default();
            f(&mut p);
            p.validate().is_err()
        };
        assert!(bad(|p| p.n = 0));
        assert!(bad(|p| p.max_tokens = 0));
        assert!(bad(|p| p.temperature = -1.0));
        assert!(bad(|p| p.top_p = 0.0));
        assert!(bad(|p| p.top_p = 1.5));
        assert!(bad(|p| p.top_k = Some(0)));
    }

    #[test]
    fn span_check_catches_gaps_and_mismatches() {
        let good = ScoredContinuation {
            continuation_text: "ab cd".into(),
            tokens: vec![
                ScoredToken { text: "ab ".into(), start: 0, end: 3, logprob: -0.1 },
                ScoredToken { text: "cd".into(), start: 3, end: 5, logprob: -0.2 },
            ],
        };
        assert!(spans_cover_text(&good));
        let mut gap = good.clone();
        gap.tokens[1].start = 4;
        gap.tokens[1].text = "d".into();
        assert!(!spans_cover_text(&gap));
        let mut wrong_text = good;
        wrong_text.tokens[0].text = "xx ".into();
        assert!(!spans_cover_text(&wrong_text));
    }
}
