//! Turns backend and oracle descriptors from flags, the environment, and
//! config files into live clients.

use std::sync::Arc;

use anyhow::{bail, Context, Result};
use deceptforge_client::{HttpModelClient, HttpOracle};
use deceptforge_core::{Lexicon, ModelClient, Oracle, StubOracle, ToyModel};

/// Environment variable naming the default backend when no flag is given.
pub const BACKEND_ENV: &str = "DECEPTFORGE_BACKEND_URL";

/// Picks the effective backend descriptor: flag, then environment, then
/// the config value.
pub fn backend_descriptor(flag: Option<&str>, config_value: &str) -> String {
    flag.map(str::to_string)
        .or_else(|| std::env::var(BACKEND_ENV).ok())
        .unwrap_or_else(|| config_value.to_string())
}

/// Resolves `toy:<spec path>` to an in-process toy model and `http(s)://`
/// to a wire client.
pub fn resolve_model(descriptor: &str) -> Result<Arc<dyn ModelClient>> {
    if let Some(path) = descriptor.strip_prefix("toy:") {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading toy model spec {path}"))?;
        let model = ToyModel::from_json(&text)
            .with_context(|| format!("parsing toy model spec {path}"))?;
        return Ok(Arc::new(model));
    }
    if descriptor.starts_with("http://") || descriptor.starts_with("https://") {
        return Ok(Arc::new(HttpModelClient::new(descriptor)));
    }
    bail!("backend must be toy:<spec path> or an http(s) URL, got {descriptor:?}");
}

/// Resolves `stub` to the lexicon-driven paraphraser and `http(s)://` to a
/// rewrite-endpoint client.
pub fn resolve_oracle(descriptor: &str, lexicon: &Lexicon) -> Result<Arc<dyn Oracle>> {
    if descriptor == "stub" {
        return Ok(Arc::new(StubOracle::new(lexicon.clone())));
    }
    if descriptor.starts_with("http://") || descriptor.starts_with("https://") {
        return Ok(Arc::new(HttpOracle::new(descriptor)));
    }
    bail!("oracle must be \"stub\" or an http(s) URL, got {descriptor:?}");
}
