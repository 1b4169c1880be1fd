//! Paraphrasing oracles: the trait a rewriting backend implements, the
//! deterministic synonym-ring stub used for hermetic runs, the contract
//! wrapper that polices rewrite quality, and seed-group construction.

use std::collections::BTreeMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{map_words, parse_sentences, PromptGenome};

/// Whether a rewrite covers one sentence or a whole genome text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParaphraseMode {
    Sentence,
    Whole,
}

/// A rewrite request with the acceptance tolerance applied to its result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseRequest {
    pub text: String,
    pub mode: ParaphraseMode,
    pub length_tolerance: f64,
}

impl ParaphraseRequest {
    pub fn new(text: impl Into<String>, mode: ParaphraseMode) -> Self {
        Self { text: text.into(), mode, length_tolerance: 0.3 }
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle unreachable: {0}")]
    Transport(String),
    #[error("invalid paraphrase request: {0}")]
    InvalidRequest(String),
}

/// A text-rewriting backend. Implementations return their raw rewrite; the
/// `paraphrase` wrapper enforces the length and sentence-count contract.
#[async_trait]
pub trait Oracle: Send + Sync {
    async fn rewrite(&self, text: &str, mode: ParaphraseMode) -> Result<String, OracleError>;
}

/// An ordered synonym table. Entry order matters: the first synonym is the
/// rotation target of the stub oracle. Synonymy is read symmetrically when
/// matching (either side listing the other counts).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon {
    pub entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn from_json(json: &str) -> Result<Self, OracleError> {
        serde_json::from_str(json).map_err(|e| OracleError::InvalidRequest(e.to_string()))
    }

    /// The word the stub rotates `word` to, if it has an entry.
    pub fn rotate(&self, word: &str) -> Option<&str> {
        self.entries.get(word)?.first().map(|s| s.as_str())
    }

    pub fn is_synonym(&self, a: &str, b: &str) -> bool {
        if a == b {
            return false;
        }
        let listed = |x: &str, y: &str| {
            self.entries.get(x).is_some_and(|syns| syns.iter().any(|s| s == y))
        };
        listed(a, b) || listed(b, a)
    }

    /// A small built-in table so fallback paraphrasing still does something
    /// when no lexicon file is configured.
    pub fn builtin() -> Self {
        let pairs: &[(&str, &[&str])] = &[
            ("big", &["large"]),
            ("large", &["big"]),
            ("quick", &["rapid"]),
            ("rapid", &["quick"]),
            ("method", &["approach", "technique"]),
            ("approach", &["technique", "method"]),
            ("technique", &["method", "approach"]),
            ("important", &["significant"]),
            ("significant", &["important"]),
        ];
        let entries = pairs
            .iter()
            .map(|(w, syns)| (w.to_string(), syns.iter().map(|s| s.to_string()).collect()))
            .collect();
        Self { entries }
    }
}

/// Deterministic offline paraphraser: every lexicon word rotates to the next
/// synonym in its ring, everything else passes through. A pure function of
/// its input, so identical inputs always yield identical outputs.
#[derive(Debug, Clone)]
pub struct StubOracle {
    lexicon: Lexicon,
}

impl StubOracle {
    pub fn new(lexicon: Lexicon) -> Self {
        Self { lexicon }
    }
}

impl Default for StubOracle {
    fn default() -> Self {
        Self::new(Lexicon::builtin())
    }
}

#[async_trait]
impl Oracle for StubOracle {
    async fn rewrite(&self, text: &str, _mode: ParaphraseMode) -> Result<String, OracleError> {
        Ok(map_words(text, |w| self.lexicon.rotate(w).map(|s| s.to_string())))
    }
}

const MAX_ATTEMPTS: usize = 3;

/// Rewrites `req.text` through `oracle`, accepting only outputs whose word
/// count stays within the tolerance and whose sentence count is preserved.
/// After three failed attempts the input comes back unchanged. Transport
/// errors propagate so callers can degrade to a no-op.
pub async fn paraphrase(
    oracle: &dyn Oracle,
    req: &ParaphraseRequest,
) -> Result<String, OracleError> {
    if req.text.trim().is_empty() {
        return Err(OracleError::InvalidRequest("paraphrase text is empty".into()));
    }
    if !(0.0..1.0).contains(&req.length_tolerance) {
        return Err(OracleError::InvalidRequest(format!(
            "length tolerance {} outside [0, 1)",
            req.length_tolerance
        )));
    }
    for _ in 0..MAX_ATTEMPTS {
        let candidate = oracle.rewrite(&req.text, req.mode).await?;
        if accepts(&req.text, &candidate, req.length_tolerance) {
            return Ok(candidate);
        }
    }
    Ok(req.text.clone())
}

fn accepts(input: &str, output: &str, tolerance: f64) -> bool {
    let words_in = input.split_whitespace().count() as f64;
    let words_out = output.split_whitespace().count() as f64;
    if words_out < words_in * (1.0 - tolerance) || words_out > words_in * (1.0 + tolerance) {
        return false;
    }
    let count = |t: &str| parse_sentences(t).map(|s| s.len()).unwrap_or(0);
    count(input) == count(output)
}

/// Builds the initial population: the seed genome itself followed by an
/// iterated paraphrase chain (each element a vetted rewrite of the previous
/// one). If the oracle becomes unreachable, the remainder of the group is
/// filled by the built-in stub so group size never shrinks.
pub async fn seed_group(
    seed: &PromptGenome,
    size: usize,
    oracle: &dyn Oracle,
) -> Result<Vec<PromptGenome>, OracleError> {
    if size == 0 {
        return Err(OracleError::InvalidRequest("group size must be at least 1".into()));
    }
    let mut group = Vec::with_capacity(size);
    group.push(seed.clone());
    let fallback = StubOracle::default();
    let mut use_fallback = false;
    let mut text = seed.text();
    while group.len() < size {
        let req = ParaphraseRequest::new(text.clone(), ParaphraseMode::Whole);
        let result = if use_fallback {
            paraphrase(&fallback, &req).await
        } else {
            match paraphrase(oracle, &req).await {
                Err(OracleError::Transport(_)) => {
                    use_fallback = true;
                    paraphrase(&fallback, &req).await
                }
                other => other,
            }
        };
        text = result?;
        group.push(PromptGenome::from_text(&text, seed.attachment).map_err(|e| {
            OracleError::InvalidRequest(format!("paraphrase produced unusable text: {e}"))
        })?);
    }
    Ok(group)
}
