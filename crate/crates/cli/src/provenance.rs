use std::path::Path;

use relcap::checkpoint::FORMAT_VERSION;
use relcap::dataset::record::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, RunConfig};
use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    /// File name only, so outputs do not depend on the working directory.
    pub name: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self {
            name: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: sha256_hex(&bytes),
        })
    }
}

/// Echoed into every output of a command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub model: String,
    pub dataset_schema: u32,
    pub checkpoint_format: u32,
    pub inputs: Vec<InputDigest>,
}

impl Provenance {
    pub fn new(command: &str, cfg: &RunConfig, inputs: &[&Path]) -> CliResult<Self> {
        Ok(Self {
            tool: "relcap".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_sha256: cfg.hash(),
            seed: cfg.seed,
            model: cfg.model.clone(),
            dataset_schema: SCHEMA_VERSION,
            checkpoint_format: FORMAT_VERSION,
            inputs: inputs.iter().map(|p| InputDigest::of(p)).collect::<CliResult<_>>()?,
        })
    }
}
