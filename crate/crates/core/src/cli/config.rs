//! Run configuration: one TOML document, versioned, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{ChainConfig, LearningRates};
use crate::error::{Error, Result};
use crate::metrics::ClassifierConfig;
use crate::models::ModelConfig;
use crate::world::{PartitionCounts, WorldConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub counts: PartitionCounts,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    /// Default for `--out` when the command line gives none. Not hashed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            precision: Precision::F64,
            world: WorldConfig::default(),
            counts: PartitionCounts::default(),
            chain: ChainConfig::default(),
            classifier: ClassifierConfig::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Full-size partitions, speaker embedding width and learning rates.
    pub fn full_scale() -> Self {
        Self {
            world: WorldConfig::full_scale(),
            counts: PartitionCounts::full_scale(),
            chain: ChainConfig {
                lr: LearningRates::full_scale(),
                model: ModelConfig::full_scale(),
                ..ChainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.world.validate()?;
        if self.counts.total_scenes() > self.world.num_scenes() {
            return Err(Error::config(format!(
                "partitions need {} scenes, the world has {}",
                self.counts.total_scenes(),
                self.world.num_scenes()
            )));
        }
        if self.counts.paired == 0 || self.counts.dev == 0 {
            return Err(Error::config("paired and dev partitions must be non-empty"));
        }
        self.chain.validate()?;
        if !(0.0..=1.0).contains(&self.classifier.min_accuracy) || self.classifier.hidden == 0 {
            return Err(Error::config("classifier needs hidden > 0 and min_accuracy in [0, 1]"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, without `output_dir`.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output_dir: None,
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_needs_a_version() {
        assert!(RunConfig::parse("").is_err());
        let c = RunConfig::parse("schema_version = 1").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_fail_closed() {
        assert!(matches!(RunConfig::parse("schema_version = 1\nsed = 3"), Err(Error::Config(_))));
        assert!(RunConfig::parse("schema_version = 1\n[chain]\nbeem = 3").is_err());
        assert!(RunConfig::parse("schema_version = 2").is_err());
    }

    #[test]
    fn round_trip_and_hash() {
        let mut c = RunConfig {
            seed: 9,
            ..RunConfig::default()
        };
        c.chain.epochs.paired = 3;
        let back = RunConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let moved = RunConfig {
            output_dir: Some("elsewhere".into()),
            ..c.clone()
        };
        assert_eq!(moved.hash(), c.hash());
        c.seed = 10;
        assert_ne!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn infeasible_counts_are_config_errors() {
        let r = RunConfig::parse("schema_version = 1\n[counts]\npaired = 2000");
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn shipped_configs_match_the_presets() {
        assert_eq!(RunConfig::parse(include_str!("../../../../configs/toy.toml")).unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse(include_str!("../../../../configs/full.toml")).unwrap(), RunConfig::full_scale());
    }
}
