//! Run configuration, read from TOML.
//!
//! ```toml
//! ablation = "full"
//! cache_dir = "cache"
//! output_dir = "runs/full"
//!
//! [data]
//! train = "data/train.jsonl"
//! dev = "data/dev.jsonl"
//! format = "native_jsonl"
//! label_mode = "hover"
//!
//! [extractor]
//! kind = "oracle"
//!
//! [embedding]
//! kind = "hashed"
//! dim = 64
//!
//! [graph]
//! n_max = 20
//!
//! [gnn]
//! layers = 2
//! heads = 8
//!
//! [train]
//! batch_size = 24
//! ```
//!
//! Credentials never appear here: remote sections name the environment
//! variable that holds the key (`api_key_env`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{write_atomic, ArtifactCache, DatasetFormat, LabelMode};
use crate::embedding::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::gnn::GnnConfig;
use crate::graph::{GraphOptions, DEFAULT_N_MAX};
use crate::pipeline::{Extractor, ExtractorConfig, Pipeline};
use crate::verifier::{Ablation, ModelConfig, TrainConfig};

pub const EFFECTIVE_CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub format: DatasetFormat,
    pub label_mode: LabelMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub n_max: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { n_max: DEFAULT_N_MAX }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub ablation: Ablation,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub extractor: ExtractorConfig,
    pub embedding: EmbeddingConfig,
    pub graph: GraphConfig,
    pub gnn: GnnConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ablation: Ablation::Full,
            cache_dir: None,
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            extractor: ExtractorConfig::default(),
            embedding: EmbeddingConfig::default(),
            graph: GraphConfig::default(),
            gnn: GnnConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks shapes and that every referenced input path exists.
    pub fn validate(&self) -> Result<()> {
        self.gnn.validate()?;
        self.train.validate()?;
        if self.embedding.dim() != self.gnn.dim_in {
            return Err(Error::Config(format!(
                "embedding dim {} differs from gnn.dim_in {}",
                self.embedding.dim(),
                self.gnn.dim_in
            )));
        }
        if self.graph.n_max == 0 {
            return Err(Error::Config("graph.n_max must be positive".into()));
        }
        for (name, p) in [("data.train", &self.data.train), ("data.dev", &self.data.dev)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Config(format!("{name} {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            n_max: self.graph.n_max,
            mode: self.ablation.graph_mode(),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            gnn: self.gnn,
            ablation: self.ablation,
            labels: self.data.label_mode.labels(),
        }
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        Ok(Pipeline {
            extractor: Extractor::from_config(&self.extractor)?,
            embedder: self.embedding.build()?,
            graph: self.graph_options(),
            cache: self.cache_dir.as_ref().map(ArtifactCache::new),
        })
    }

    /// SHA-256 of the canonical TOML form.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// Writes the merged configuration to `<output_dir>/config.toml`.
    pub fn write_effective(&self) -> Result<PathBuf> {
        let path = self.output_dir.join(EFFECTIVE_CONFIG_FILE);
        write_atomic(&path, self.to_toml()?.as_bytes())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train.learning_rate, 2e-4);
        assert_eq!(c.gnn.heads, 8);
        assert_eq!(c.graph.n_max, 20);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig {
            ablation: Ablation::SeqAtt,
            cache_dir: Some("cache".into()),
            train: TrainConfig {
                batch_size: 4,
                ..Default::default()
            },
            ..Default::default()
        };
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint().unwrap(), c.fingerprint().unwrap());
        assert_ne!(RunConfig::default().fingerprint().unwrap(), c.fingerprint().unwrap());
    }

    #[test]
    fn parses_sections() {
        let c = RunConfig::from_toml(
            r#"
            ablation = "no-ere"
            [data]
            label_mode = "fever"
            format = "fever_jsonl"
            [extractor]
            kind = "remote"
            model = "m"
            base_url = "http://localhost:1"
            [embedding]
            kind = "hashed"
            dim = 32
            [gnn]
            dim_in = 32
            dim_hidden = 32
            heads = 4
            "#,
        )
        .unwrap();
        assert_eq!(c.ablation, Ablation::NoEre);
        assert_eq!(c.data.label_mode, LabelMode::Fever);
        assert!(matches!(c.extractor, ExtractorConfig::Remote(ref r) if r.model == "m"));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(RunConfig::from_toml("ablation = \"bogus\""), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("unknown = 1"), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.data.train = Some("/nonexistent/train.jsonl".into());
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.gnn.dim_in = 32;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
