//! Prompt genomes: ordered sentence lists attached before or after a coding
//! task, plus the sentence and word segmentation rules everything else
//! (crossover, substitution, paraphrasing) relies on.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Where a genome's text sits relative to the task description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attachment {
    Prefix,
    Suffix,
}

#[derive(Debug, Error, PartialEq)]
pub enum GenomeError {
    #[error("text contains no sentences")]
    EmptyText,
    #[error("task text is empty")]
    EmptyTask,
    #[error("sentence index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{given} indices exceed the swap limit of {max_swap}")]
    TooManyIndices { given: usize, max_swap: usize },
}

/// An evolvable natural-language wrapper for a coding task.
///
/// The genome is an ordered list of non-empty sentences. Its identity is a
/// hash of the content, so equal content always maps to the same id and run
/// artifacts stay reproducible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptGenome {
    pub sentences: Vec<String>,
    pub attachment: Attachment,
    pub genome_id: String,
}

impl PromptGenome {
    /// Builds a genome by segmenting `text` into sentences.
    pub fn from_text(text: &str, attachment: Attachment) -> Result<Self, GenomeError> {
        let sentences = parse_sentences(text)?;
        Ok(Self::from_sentences(sentences, attachment))
    }

    /// Builds a genome from pre-segmented sentences, dropping empty entries.
    pub fn from_sentences(sentences: Vec<String>, attachment: Attachment) -> Self {
        let sentences: Vec<String> = sentences
            .into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let genome_id = content_id(&sentences, attachment);
        Self { sentences, attachment, genome_id }
    }

    /// The genome text: sentences joined by single spaces.
    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Replaces one sentence, returning a new genome with a fresh id.
    pub fn with_sentence(&self, index: usize, sentence: String) -> Result<Self, GenomeError> {
        if index >= self.sentences.len() {
            return Err(GenomeError::IndexOutOfRange { index, len: self.sentences.len() });
        }
        let mut sentences = self.sentences.clone();
        sentences[index] = sentence;
        Ok(Self::from_sentences(sentences, self.attachment))
    }
}

fn content_id(sentences: &[String], attachment: Attachment) -> String {
    let mut hasher = Sha256::new();
    hasher.update(match attachment {
        Attachment::Prefix => b"p",
        Attachment::Suffix => b"s",
    });
    for s in sentences {
        hasher.update(s.as_bytes());
        hasher.update([0x1f]);
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Splits text into sentences on `.`, `!`, or `?` followed by whitespace (or
/// end of text). Terminators stay with their sentence; surrounding whitespace
/// is trimmed. A trailing unterminated fragment counts as a sentence.
pub fn parse_sentences(text: &str) -> Result<Vec<String>, GenomeError> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(ch) = chars.next() {
        current.push(ch);
        if matches!(ch, '.' | '!' | '?') {
            let at_break = match chars.peek() {
                None => true,
                Some(next) => next.is_whitespace(),
            };
            if at_break {
                let s = current.trim();
                if !s.is_empty() {
                    sentences.push(s.to_string());
                }
                current.clear();
            }
        }
    }
    let tail = current.trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    if sentences.is_empty() {
        return Err(GenomeError::EmptyText);
    }
    Ok(sentences)
}

/// Renders the full prompt: genome text and task joined by a single space,
/// ordered by the genome's attachment side.
pub fn render(genome: &PromptGenome, task: &str) -> Result<String, GenomeError> {
    let task = task.trim();
    if task.is_empty() {
        return Err(GenomeError::EmptyTask);
    }
    let text = genome.text();
    if text.is_empty() {
        return Ok(task.to_string());
    }
    Ok(match genome.attachment {
        Attachment::Prefix => format!("{text} {task}"),
        Attachment::Suffix => format!("{task} {text}"),
    })
}

/// Exchanges the sentences at `indices` between two genomes, returning the
/// two offspring. Every index must be valid in both genomes and the index
/// set must not exceed `max_swap`.
pub fn swap_sentences(
    a: &PromptGenome,
    b: &PromptGenome,
    indices: &[usize],
    max_swap: usize,
) -> Result<(PromptGenome, PromptGenome), GenomeError> {
    if indices.len() > max_swap {
        return Err(GenomeError::TooManyIndices { given: indices.len(), max_swap });
    }
    for &i in indices {
        let len = a.sentences.len().min(b.sentences.len());
        if i >= a.sentences.len() || i >= b.sentences.len() {
            return Err(GenomeError::IndexOutOfRange { index: i, len });
        }
    }
    let mut sa = a.sentences.clone();
    let mut sb = b.sentences.clone();
    for &i in indices {
        std::mem::swap(&mut sa[i], &mut sb[i]);
    }
    Ok((
        PromptGenome::from_sentences(sa, a.attachment),
        PromptGenome::from_sentences(sb, b.attachment),
    ))
}

/// One word occurrence inside a genome: the lowercased word plus the sentence
/// it lives in and its word position within the whole genome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordOccurrence {
    pub word: String,
    pub sentence_index: usize,
    pub word_index: usize,
}

/// Lists every word occurrence in document order. Words are maximal
/// alphabetic runs, lowercased; digits and punctuation separate words.
pub fn word_occurrences(genome: &PromptGenome) -> Vec<WordOccurrence> {
    let mut out = Vec::new();
    let mut word_index = 0;
    for (sentence_index, sentence) in genome.sentences.iter().enumerate() {
        for word in alphabetic_runs(sentence) {
            out.push(WordOccurrence { word, sentence_index, word_index });
            word_index += 1;
        }
    }
    out
}

/// Lowercased maximal alphabetic runs of a string, in order.
pub fn alphabetic_runs(text: &str) -> Vec<String> {
    let mut runs = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphabetic() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            runs.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }
    runs
}

/// Rewrites each alphabetic run of `text` through `replace`, keeping
/// everything between runs untouched. The replacement receives the lowercased
/// run; a leading-uppercase original re-capitalizes the replacement.
pub fn map_words(text: &str, mut replace: impl FnMut(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut run = String::new();
    let flush = |run: &mut String, out: &mut String, replace: &mut dyn FnMut(&str) -> Option<String>| {
        if run.is_empty() {
            return;
        }
        let lower = run.to_lowercase();
        match replace(&lower) {
            Some(repl) => {
                let capitalized = run.chars().next().is_some_and(|c| c.is_uppercase());
                if capitalized {
                    let mut chars = repl.chars();
                    if let Some(first) = chars.next() {
                        out.extend(first.to_uppercase());
                        out.push_str(chars.as_str());
                    }
                } else {
                    out.push_str(&repl);
                }
            }
            None => out.push_str(run),
        }
        run.clear();
    };
    for ch in text.chars() {
        if ch.is_alphabetic() {
            run.push(ch);
        } else {
            flush(&mut run, &mut out, &mut replace);
            out.push(ch);
        }
    }
    flush(&mut run, &mut out, &mut replace);
    out
}
