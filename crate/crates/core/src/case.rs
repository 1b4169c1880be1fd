//! Case files: one JSON record per attack scenario, naming the task, the
//! secure solution, the edit script that plants the vulnerability, and the
//! detector that recognizes it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{scan, DetectError, DetectionVerdict, PatternLibrary};
use crate::genome::Attachment;
use crate::target::{apply_edits, validate, EditOp, TargetCode, TargetError};

/// The serialized form of one attack scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub id: String,
    pub cwe: String,
    pub language: String,
    pub task: String,
    pub seed_template_file: String,
    pub attachment: Attachment,
    pub solution_code: String,
    pub edits: Vec<EditOp>,
    pub detector_id: String,
    #[serde(default)]
    pub notes: String,
}

/// A case with its seed template read and its target assembled.
#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub spec: CaseSpec,
    pub seed_text: String,
    pub target: TargetCode,
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("case file {path} is malformed: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("case {id}: {source}")]
    Target {
        id: String,
        #[source]
        source: TargetError,
    },
    #[error("case {id} is invalid: {reason}")]
    Invalid { id: String, reason: String },
    #[error("case {id}: {source}")]
    Detector {
        id: String,
        #[source]
        source: DetectError,
    },
}

impl CaseSpec {
    /// Builds the labeled target from the solution and edit script.
    pub fn build_target(&self) -> Result<TargetCode, CaseError> {
        let target = apply_edits(&self.solution_code, &self.edits, &self.cwe, &self.language)
            .map_err(|source| CaseError::Target { id: self.id.clone(), source })?;
        let violations = validate(&target);
        if let Some(v) = violations.first() {
            return Err(CaseError::Invalid { id: self.id.clone(), reason: v.description.clone() });
        }
        Ok(target)
    }

    pub fn validate(&self, library: &PatternLibrary) -> Result<(), CaseError> {
        for (field, value) in [
            ("id", &self.id),
            ("task", &self.task),
            ("solution_code", &self.solution_code),
            ("seed_template_file", &self.seed_template_file),
        ] {
            if value.trim().is_empty() {
                return Err(CaseError::Invalid {
                    id: self.id.clone(),
                    reason: format!("{field} is empty"),
                });
            }
        }
        library
            .get(&self.detector_id)
            .map_err(|source| CaseError::Detector { id: self.id.clone(), source })?;
        Ok(())
    }
}

/// Reads one case file and its seed template (resolved relative to the case
/// file's directory), then assembles and checks the target.
pub fn load_case(path: &Path, library: &PatternLibrary) -> Result<LoadedCase, CaseError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CaseError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    let spec: CaseSpec = serde_json::from_str(&raw)
        .map_err(|e| CaseError::Malformed { path: path.to_path_buf(), message: e.to_string() })?;
    spec.validate(library)?;
    let template_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&spec.seed_template_file);
    let seed_text = std::fs::read_to_string(&template_path)
        .map_err(|e| CaseError::Io { path: template_path.clone(), message: e.to_string() })?;
    if seed_text.trim().is_empty() {
        return Err(CaseError::Invalid {
            id: spec.id.clone(),
            reason: format!("seed template {} is empty", template_path.display()),
        });
    }
    let target = spec.build_target()?;
    Ok(LoadedCase { spec, seed_text, target })
}

/// Loads every `*.json` case under `dir/cases`, sorted by file name.
pub fn load_dataset(dir: &Path, library: &PatternLibrary) -> Result<Vec<LoadedCase>, CaseError> {
    let cases_dir = dir.join("cases");
    let entries = std::fs::read_dir(&cases_dir)
        .map_err(|e| CaseError::Io { path: cases_dir.clone(), message: e.to_string() })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_case(p, library)).collect()
}

/// Runs the case's detector over generated code.
pub fn judge_output(
    code: &str,
    case: &CaseSpec,
    library: &PatternLibrary,
) -> Result<DetectionVerdict, DetectError> {
    scan(code, library, &case.detector_id)
}
