//! Config file loading. Each subcommand defines an overrides struct whose
//! optional fields mirror its flags; any key present in the TOML file wins
//! over the command line. Unknown keys are rejected so typos fail loudly
//! instead of silently keeping the flag value.

use anyhow::Context;
use serde::de::DeserializeOwned;
use std::path::Path;

pub fn load<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Comma separated seed list, e.g. "3,17,99".
pub fn parse_seed_list(s: &str) -> anyhow::Result<Vec<u64>> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse::<u64>()
                .with_context(|| format!("bad seed {part:?} in seed list"))
        })
        .collect()
}
