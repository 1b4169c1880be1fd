//! Pattern-based vulnerability detection over generated code: regex clauses
//! that must all match, exclusion clauses that must not, and a needs-review
//! marker for absence-style findings that want human adjudication.

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Languages a pattern applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternLanguage {
    C,
    Python,
    Any,
}

/// A detector: all `must_match` clauses firing with no `must_not_match`
/// clause firing marks code vulnerable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnPattern {
    pub detector_id: String,
    pub cwe_id: String,
    pub language: PatternLanguage,
    pub must_match: Vec<String>,
    #[serde(default)]
    pub must_not_match: Vec<String>,
    #[serde(default)]
    pub needs_review: bool,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("detector {detector_id:?}: regex {clause:?} does not compile: {message}")]
    BadRegex { detector_id: String, clause: String, message: String },
    #[error("detector {detector_id:?} has no match clauses at all")]
    NoClauses { detector_id: String },
    #[error("detector id {detector_id:?} appears more than once")]
    DuplicateDetector { detector_id: String },
    #[error("no detector with id {0:?} in the library")]
    UnknownDetector(String),
    #[error("pattern library is malformed: {0}")]
    Malformed(String),
}

#[derive(Debug)]
struct CompiledPattern {
    pattern: VulnPattern,
    must_match: Vec<Regex>,
    must_not_match: Vec<Regex>,
}

/// A validated, compiled set of detectors loaded from JSON.
#[derive(Debug)]
pub struct PatternLibrary {
    compiled: Vec<CompiledPattern>,
}

impl PatternLibrary {
    pub fn new(patterns: Vec<VulnPattern>) -> Result<Self, DetectError> {
        let mut compiled = Vec::with_capacity(patterns.len());
        let mut seen = std::collections::BTreeSet::new();
        for pattern in patterns {
            if !seen.insert(pattern.detector_id.clone()) {
                return Err(DetectError::DuplicateDetector {
                    detector_id: pattern.detector_id,
                });
            }
            if pattern.must_match.is_empty() && pattern.must_not_match.is_empty() {
                return Err(DetectError::NoClauses { detector_id: pattern.detector_id });
            }
            let compile = |clauses: &[String], detector_id: &str| {
                clauses
                    .iter()
                    .map(|c| {
                        Regex::new(c).map_err(|e| DetectError::BadRegex {
                            detector_id: detector_id.to_string(),
                            clause: c.clone(),
                            message: e.to_string(),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()
            };
            let must_match = compile(&pattern.must_match, &pattern.detector_id)?;
            let must_not_match = compile(&pattern.must_not_match, &pattern.detector_id)?;
            compiled.push(CompiledPattern { pattern, must_match, must_not_match });
        }
        Ok(Self { compiled })
    }

    pub fn from_json(json: &str) -> Result<Self, DetectError> {
        let patterns: Vec<VulnPattern> =
            serde_json::from_str(json).map_err(|e| DetectError::Malformed(e.to_string()))?;
        Self::new(patterns)
    }

    pub fn get(&self, detector_id: &str) -> Result<&VulnPattern, DetectError> {
        self.find(detector_id).map(|c| &c.pattern)
    }

    pub fn patterns(&self) -> impl Iterator<Item = &VulnPattern> {
        self.compiled.iter().map(|c| &c.pattern)
    }

    fn find(&self, detector_id: &str) -> Result<&CompiledPattern, DetectError> {
        self.compiled
            .iter()
            .find(|c| c.pattern.detector_id == detector_id)
            .ok_or_else(|| DetectError::UnknownDetector(detector_id.to_string()))
    }
}

/// One clause firing: which clause, and the first span it matched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClauseMatch {
    pub clause: String,
    pub start: usize,
    pub end: usize,
}

/// The outcome of scanning one piece of code with one detector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub detector_id: String,
    pub vulnerable: bool,
    pub matched: Vec<ClauseMatch>,
    pub needs_review: bool,
}

/// Scans `code` with the detector `detector_id` from `library`.
pub fn scan(
    code: &str,
    library: &PatternLibrary,
    detector_id: &str,
) -> Result<DetectionVerdict, DetectError> {
    let compiled = library.find(detector_id)?;
    let mut matched = Vec::new();
    let mut all_required = true;
    for (clause, regex) in compiled.pattern.must_match.iter().zip(&compiled.must_match) {
        match regex.find(code) {
            Some(m) => matched.push(ClauseMatch {
                clause: clause.clone(),
                start: m.start(),
                end: m.end(),
            }),
            None => all_required = false,
        }
    }
    let mut any_excluded = false;
    for (clause, regex) in compiled.pattern.must_not_match.iter().zip(&compiled.must_not_match) {
        if let Some(m) = regex.find(code) {
            any_excluded = true;
            matched.push(ClauseMatch { clause: clause.clone(), start: m.start(), end: m.end() });
        }
    }
    let vulnerable = all_required && !any_excluded;
    Ok(DetectionVerdict {
        detector_id: detector_id.to_string(),
        vulnerable,
        matched,
        needs_review: vulnerable && compiled.pattern.needs_review,
    })
}
