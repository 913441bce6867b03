//! Run configuration shared by every pipeline stage.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{FieldMap, SplitRatios};
use crate::encoder::DEFAULT_DIM;
use crate::error::{Error, Result};
use crate::learn::{LossConfig, OptimConfig, SamplerConfig, TrainConfig};
use crate::model::ModelConfig;
use crate::props::{ScoreSource, ScorerConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub field_map: FieldMap,
    pub k_core: usize,
    pub split: SplitRatios,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            field_map: FieldMap::default(),
            k_core: 5,
            split: SplitRatios::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderConfig {
    /// Built-in hashing encoder.
    Hash { dim: usize, seed: u64 },
    /// Precomputed embedding file.
    File { path: PathBuf },
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::Hash { dim: DEFAULT_DIM, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub data: DataConfig,
    pub props: ScorerConfig,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    pub optimizer: OptimConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            data: DataConfig::default(),
            props: ScorerConfig::default(),
            encoder: EncoderConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            sampler: SamplerConfig::default(),
            optimizer: OptimConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("bad run config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            sampler: self.sampler,
            optimizer: self.optimizer,
        }
    }

    /// Checks value ranges and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        if self.data.k_core == 0 {
            return Err(Error::Config("k_core must be >= 1".into()));
        }
        self.model.validate()?;
        self.train_config().validate(&self.model)?;
        for source in [&self.props.polar_senti, &self.props.prob_helpful] {
            if let ScoreSource::File { path } = source {
                if !path.exists() {
                    return Err(Error::Config(format!("score file {} does not exist", path.display())));
                }
            }
        }
        match &self.encoder {
            EncoderConfig::Hash { dim: 0, .. } => Err(Error::Config("hash encoder dim must be >= 1".into())),
            EncoderConfig::File { path } if !path.exists() => {
                Err(Error::Config(format!("embedding file {} does not exist", path.display())))
            }
            _ => Ok(()),
        }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn omitted_sections_take_defaults() {
        let cfg = RunConfig::from_json(r#"{"schema_version": 1, "model": {"variant": "no_prop"}}"#).unwrap();
        assert_eq!(cfg.model.variant, Variant::NoProp);
        assert_eq!(cfg.model.filters, ModelConfig::default().filters);
        assert_eq!(cfg.optimizer, OptimConfig::default());
        assert_eq!(cfg.encoder, EncoderConfig::Hash { dim: 768, seed: 0 });
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(RunConfig::from_json(r#"{"schema_version": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"schema_version": 1, "unknown": 3}"#).is_err());
        let cfg = RunConfig::from_json(r#"{"schema_version": 1, "optimizer": {"learning_rate": -1}}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_json(
            r#"{"schema_version": 1, "encoder": {"kind": "file", "path": "/no/such/file.rpem"}}"#,
        )
        .unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_property_variant_parses() {
        let cfg =
            RunConfig::from_json(r#"{"schema_version": 1, "model": {"variant": {"single_property": "age"}}}"#).unwrap();
        assert_eq!(cfg.model.variant, Variant::SingleProperty(crate::props::PropertyId::Age));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
