//! Run configuration: one JSON file pinning everything an attack or
//! benchmark needs, so the snapshot written into a run directory replays
//! the run against deterministic backends.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use deceptforge_core::EvolutionConfig;
use serde::{Deserialize, Serialize};

/// Full run configuration. Every field has a default, so partial config
/// files and no config file at all both work.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub evolution: EvolutionConfig,
    /// `http(s)://...` for a served backend, `toy:<spec path>` for an
    /// in-process toy model.
    pub backend_url: String,
    /// `stub` for the bundled lexicon-driven paraphraser, or the URL of a
    /// rewrite endpoint.
    pub oracle: String,
    /// Perplexity scorer backend; left out, perplexity is not computed.
    pub scorer_url: Option<String>,
    pub dataset_path: PathBuf,
    pub output_dir: PathBuf,
    pub pattern_lib: PathBuf,
    pub lexicon: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            evolution: EvolutionConfig::default(),
            backend_url: "toy:data/toy_model.json".into(),
            oracle: "stub".into(),
            scorer_url: None,
            dataset_path: "data".into(),
            output_dir: "runs/out".into(),
            pattern_lib: "data/patterns.json".into(),
            lexicon: "data/lexicon.json".into(),
        }
    }
}

fn is_http(value: &str) -> bool {
    value.starts_with("http://") || value.starts_with("https://")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Checks URL shapes and that the files every subcommand needs exist.
    /// The dataset directory is only required when `need_dataset` is set.
    pub fn validate(&self, need_dataset: bool) -> Result<()> {
        if !is_http(&self.backend_url) && !self.backend_url.starts_with("toy:") {
            bail!("backend_url must be an http(s) URL or toy:<spec path>, got {:?}", self.backend_url);
        }
        if !is_http(&self.oracle) && self.oracle != "stub" {
            bail!("oracle must be an http(s) URL or \"stub\", got {:?}", self.oracle);
        }
        if let Some(url) = &self.scorer_url {
            if !is_http(url) && !url.starts_with("toy:") {
                bail!("scorer_url must be an http(s) URL or toy:<spec path>, got {url:?}");
            }
        }
        for (name, path) in [("pattern_lib", &self.pattern_lib), ("lexicon", &self.lexicon)] {
            if !path.exists() {
                bail!("{name} file {} does not exist", path.display());
            }
        }
        if need_dataset && !self.dataset_path.is_dir() {
            bail!("dataset_path {} is not a directory", self.dataset_path.display());
        }
        Ok(())
    }
}
