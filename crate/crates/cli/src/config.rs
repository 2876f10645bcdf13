//! Run configuration: defaults, overlaid by a TOML file, overlaid by flags.

use std::path::Path;

use relcap::applications::graph::NODE_MERGE_IOU;
use relcap::applications::retrieval::RetrievalProtocol;
use relcap::dataset::toy::ToyConfig;
use relcap::metrics::MetricConfig;
use relcap::model::ModelSpec;
use relcap::pipeline::{InferenceConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub merge_iou: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            merge_iou: NODE_MERGE_IOU,
        }
    }
}

/// Every setting a command reads. `seed` is the single seed of a run: it
/// drives toy generation, training and enrichment, and replaces
/// `train.seed`. `keep_after_nms` replaces the matching inference and
/// metric fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: String,
    pub keep_after_nms: usize,
    pub toy: ToyConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub metrics: MetricConfig,
    pub retrieval: RetrievalProtocol,
    pub graph: GraphConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            model: "mttsnet,mtl,rem".into(),
            keep_after_nms: 50,
            toy: ToyConfig::default(),
            train: TrainConfig::default(),
            inference: InferenceConfig::default(),
            metrics: MetricConfig::default(),
            retrieval: RetrievalProtocol::default(),
            graph: GraphConfig::default(),
        }
    }
}

/// Flags shared by every command; `None` leaves the file or default value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub model: Option<String>,
    pub keep_after_nms: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config file: {e}")))
    }

    /// Defaults, then `path` if given, then `overrides`.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(m) = &overrides.model {
            cfg.model = m.clone();
        }
        if let Some(k) = overrides.keep_after_nms {
            cfg.keep_after_nms = k;
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Propagates the shared fields and validates the model spec.
    pub fn resolve(&mut self) -> CliResult<()> {
        self.train.seed = self.seed;
        self.inference.keep_after_nms = self.keep_after_nms;
        self.metrics.keep_after_nms = self.keep_after_nms;
        if self.keep_after_nms == 0 {
            return Err(CliError::Usage("keep_after_nms must be positive".into()));
        }
        self.spec()?;
        Ok(())
    }

    pub fn spec(&self) -> CliResult<ModelSpec> {
        self.model
            .parse()
            .map_err(|e: relcap::Error| CliError::Usage(format!("--model {}: {e}", self.model)))
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("configuration serializes");
        hex::encode(Sha256::digest(json))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flag_then_file_then_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\nmodel = \"tsnet\"\n[train]\nepochs = 5\n").unwrap();
        let from_file = RunConfig::load(Some(&path), &Overrides::default()).unwrap();
        assert_eq!((from_file.seed, from_file.model.as_str(), from_file.train.epochs), (3, "tsnet", 5));
        assert_eq!(from_file.train.seed, 3);
        assert_eq!(from_file.keep_after_nms, 50);

        let flags = Overrides {
            seed: Some(9),
            model: None,
            keep_after_nms: Some(20),
        };
        let both = RunConfig::load(Some(&path), &flags).unwrap();
        assert_eq!((both.seed, both.model.as_str(), both.train.epochs), (9, "tsnet", 5));
        assert_eq!((both.inference.keep_after_nms, both.metrics.keep_after_nms), (20, 20));
        assert_ne!(both.hash(), from_file.hash());
    }

    #[test]
    fn bad_files_are_usage_errors() {
        for text in ["seed = \"x\"", "unknown = 1", "model = \"tsnet,fast\""] {
            let err = RunConfig::from_toml(text).and_then(|mut c| c.resolve().map(|_| c)).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn default_config_survives_toml_roundtrip() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let mut back = RunConfig::from_toml(&text).unwrap();
        back.resolve().unwrap();
        let mut expected = cfg;
        expected.resolve().unwrap();
        assert_eq!(back, expected);
    }
}
