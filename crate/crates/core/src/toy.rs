//! A deterministic toy victim model for hermetic testing: whitespace-word
//! tokens, logits assembled from per-word bases, bigram bonuses, and
//! prompt-conditioned trigger boosts.

use std::collections::{BTreeMap, BTreeSet};

use async_trait::async_trait;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::alphabetic_runs;
use crate::model::{ModelClient, ModelError, SamplingParams, ScoredContinuation, ScoredToken};

/// A bigram bonus: extra logit for `next` when the previous word was `prev`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramBonus {
    pub prev: String,
    pub next: String,
    pub bonus: f64,
}

/// A trigger boost: extra logit for `word` whenever `trigger` appears among
/// the prompt's words. Boosts are non-negative, and boosts from distinct
/// triggers on the same word add up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerBoost {
    pub trigger: String,
    pub word: String,
    pub boost: f64,
}

/// Serializable description of a toy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelSpec {
    pub vocabulary: Vec<String>,
    #[serde(default)]
    pub base_logits: BTreeMap<String, f64>,
    #[serde(default)]
    pub bigram_bonuses: Vec<BigramBonus>,
    #[serde(default)]
    pub trigger_boosts: Vec<TriggerBoost>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ToySpecError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("vocabulary word {0:?} appears more than once")]
    DuplicateWord(String),
    #[error("{field} references {word:?}, which is not in the vocabulary")]
    UnknownWord { field: &'static str, word: String },
    #[error("trigger boost on {word:?} is negative ({boost})")]
    NegativeBoost { word: String, boost: f64 },
    #[error("{field} for {word:?} is not a finite number")]
    NonFinite { field: &'static str, word: String },
}

impl ToyModelSpec {
    pub fn validate(&self) -> Result<(), ToySpecError> {
        if self.vocabulary.is_empty() {
            return Err(ToySpecError::EmptyVocabulary);
        }
        let mut seen = BTreeSet::new();
        for w in &self.vocabulary {
            if !seen.insert(w.as_str()) {
                return Err(ToySpecError::DuplicateWord(w.clone()));
            }
        }
        for (w, v) in &self.base_logits {
            if !seen.contains(w.as_str()) {
                return Err(ToySpecError::UnknownWord { field: "base_logits", word: w.clone() });
            }
            if !v.is_finite() {
                return Err(ToySpecError::NonFinite { field: "base_logits", word: w.clone() });
            }
        }
        for b in &self.bigram_bonuses {
            if !seen.contains(b.next.as_str()) {
                return Err(ToySpecError::UnknownWord {
                    field: "bigram_bonuses",
                    word: b.next.clone(),
                });
            }
            if !b.bonus.is_finite() {
                return Err(ToySpecError::NonFinite {
                    field: "bigram_bonuses",
                    word: b.next.clone(),
                });
            }
        }
        for t in &self.trigger_boosts {
            if !seen.contains(t.word.as_str()) {
                return Err(ToySpecError::UnknownWord {
                    field: "trigger_boosts",
                    word: t.word.clone(),
                });
            }
            if !t.boost.is_finite() {
                return Err(ToySpecError::NonFinite { field: "trigger_boosts", word: t.word.clone() });
            }
            if t.boost < 0.0 {
                return Err(ToySpecError::NegativeBoost { word: t.word.clone(), boost: t.boost });
            }
        }
        Ok(())
    }
}

/// The runnable toy model. Wraps a validated spec with lookup tables.
#[derive(Debug, Clone)]
pub struct ToyModel {
    vocabulary: Vec<String>,
    index: BTreeMap<String, usize>,
    base: Vec<f64>,
    bigrams: BTreeMap<(String, String), f64>,
    triggers: Vec<TriggerBoost>,
}

impl ToyModel {
    pub fn new(spec: ToyModelSpec) -> Result<Self, ToySpecError> {
        spec.validate()?;
        let index: BTreeMap<String, usize> = spec
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let mut base = vec![0.0; spec.vocabulary.len()];
        for (w, v) in &spec.base_logits {
            base[index[w]] = *v;
        }
        let mut bigrams = BTreeMap::new();
        for b in &spec.bigram_bonuses {
            *bigrams.entry((b.prev.clone(), b.next.clone())).or_insert(0.0) += b.bonus;
        }
        Ok(Self {
            vocabulary: spec.vocabulary,
            index,
            base,
            bigrams,
            triggers: spec.trigger_boosts,
        })
    }

    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let spec: ToyModelSpec =
            serde_json::from_str(json).map_err(|e| ModelError::Backend(e.to_string()))?;
        Self::new(spec).map_err(|e| ModelError::Backend(e.to_string()))
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    /// Trigger boosts active for a prompt: one term per distinct trigger word
    /// present among the prompt's lowercased alphabetic runs.
    fn active_boosts(&self, prompt: &str) -> Vec<f64> {
        let present: BTreeSet<String> = alphabetic_runs(prompt).into_iter().collect();
        let mut boosts = vec![0.0; self.vocabulary.len()];
        let mut fired: BTreeSet<(&str, &str)> = BTreeSet::new();
        for t in &self.triggers {
            if present.contains(&t.trigger) && fired.insert((t.trigger.as_str(), t.word.as_str())) {
                boosts[self.index[&t.word]] += t.boost;
            }
        }
        boosts
    }

    fn logits(&self, boosts: &[f64], previous: Option<&str>) -> Vec<f64> {
        let mut logits = self.base.clone();
        if let Some(prev) = previous {
            for (i, word) in self.vocabulary.iter().enumerate() {
                if let Some(b) = self.bigrams.get(&(prev.to_string(), word.clone())) {
                    logits[i] += b;
                }
            }
        }
        for (l, b) in logits.iter_mut().zip(boosts) {
            *l += b;
        }
        logits
    }

    /// The next-word probability distribution given a prompt and the previous
    /// emitted word (`None` right at the prompt boundary before any
    /// continuation word... the previous word then comes from the prompt).
    pub fn next_distribution(&self, prompt: &str, previous: Option<&str>) -> Vec<f64> {
        let boosts = self.active_boosts(prompt);
        softmax(&self.logits(&boosts, previous))
    }

    fn last_prompt_word(prompt: &str) -> Option<String> {
        prompt.split_whitespace().last().map(|w| w.to_lowercase())
    }

    fn score_words(
        &self,
        prompt: &str,
        continuation: &str,
    ) -> Result<ScoredContinuation, ModelError> {
        if prompt.is_empty() {
            return Err(ModelError::Tokenization("prompt is empty".into()));
        }
        let words: Vec<&str> = continuation.split_whitespace().collect();
        if words.is_empty() {
            return Err(ModelError::Tokenization("continuation holds no words".into()));
        }
        for w in &words {
            if !self.index.contains_key(*w) {
                return Err(ModelError::Vocab((*w).to_string()));
            }
        }
        let spans = word_spans(continuation);
        let boosts = self.active_boosts(prompt);
        let mut previous = Self::last_prompt_word(prompt);
        let mut tokens = Vec::with_capacity(words.len());
        for (word, (start, end)) in words.iter().zip(spans) {
            let dist = softmax(&self.logits(&boosts, previous.as_deref()));
            let p = dist[self.index[*word]];
            tokens.push(ScoredToken {
                text: continuation[start..end].to_string(),
                start,
                end,
                logprob: p.ln(),
            });
            previous = Some(word.to_lowercase());
        }
        Ok(ScoredContinuation { continuation_text: continuation.to_string(), tokens })
    }

    fn sample_words(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<String>, ModelError> {
        params.validate()?;
        if prompt.is_empty() {
            return Err(ModelError::Tokenization("prompt is empty".into()));
        }
        let boosts = self.active_boosts(prompt);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed.unwrap_or(0));
        let mut completions = Vec::with_capacity(params.n);
        for _ in 0..params.n {
            let mut previous = Self::last_prompt_word(prompt);
            let mut words: Vec<&str> = Vec::with_capacity(params.max_tokens);
            for _ in 0..params.max_tokens {
                let logits = self.logits(&boosts, previous.as_deref());
                let idx = if params.temperature == 0.0 {
                    argmax(&logits)
                } else {
                    let scaled: Vec<f64> =
                        logits.iter().map(|l| l / params.temperature).collect();
                    let dist = truncate(softmax(&scaled), params.top_k, params.top_p);
                    sample_index(&dist, &mut rng)
                };
                let word = self.vocabulary[idx].as_str();
                words.push(word);
                previous = Some(word.to_lowercase());
            }
            completions.push(words.join(" "));
        }
        Ok(completions)
    }
}

#[async_trait]
impl ModelClient for ToyModel {
    async fn score(
        &self,
        prompt: &str,
        continuation: &str,
    ) -> Result<ScoredContinuation, ModelError> {
        self.score_words(prompt, continuation)
    }

    async fn generate(
        &self,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<Vec<String>, ModelError> {
        self.sample_words(prompt, params)
    }
}

/// Byte spans assigned to whitespace-separated words so that the spans tile
/// the whole text: each span runs from the end of the previous span to the
/// start of the next word (the last one to the end of text).
pub fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let starts: Vec<usize> = {
        let mut v = Vec::new();
        let mut in_word = false;
        for (i, ch) in text.char_indices() {
            if ch.is_whitespace() {
                in_word = false;
            } else if !in_word {
                v.push(i);
                in_word = true;
            }
        }
        v
    };
    let mut spans: Vec<(usize, usize)> = Vec::with_capacity(starts.len());
    for i in 0..starts.len() {
        let begin = if i == 0 { 0 } else { spans[i - 1].1 };
        let end = if i + 1 < starts.len() { starts[i + 1] } else { text.len() };
        spans.push((begin, end));
    }
    spans
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn truncate(mut dist: Vec<f64>, top_k: Option<usize>, top_p: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].partial_cmp(&dist[a]).unwrap().then(a.cmp(&b)));
    let mut keep = vec![false; dist.len()];
    let limit = top_k.unwrap_or(dist.len()).max(1);
    let mut cumulative = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if rank >= limit {
            break;
        }
        keep[i] = true;
        cumulative += dist[i];
        if cumulative >= top_p {
            break;
        }
    }
    for (i, k) in keep.iter().enumerate() {
        if !k {
            dist[i] = 0.0;
        }
    }
    let sum: f64 = dist.iter().sum();
    for d in &mut dist {
        *d /= sum;
    }
    dist
}

fn sample_index(dist: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, p) in dist.iter().enumerate() {
        cumulative += p;
        if draw < cumulative {
            return i;
        }
    }
    dist.len() - 1
}
