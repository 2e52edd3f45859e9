//! Versioned model checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::embedding::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::verifier::{Model, ModelConfig};

pub const CHECKPOINT_FORMAT: &str = "relgraph-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters plus everything needed to rebuild the model and its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub model: ModelConfig,
    pub embedding: EmbeddingConfig,
    pub n_max: usize,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(model: &Model, seed: u64, embedding: EmbeddingConfig, n_max: usize) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed,
            model: model.config.clone(),
            embedding,
            n_max,
            params: model.flat(),
        }
    }

    /// Rebuilds the model; the parameter count must match the configuration.
    pub fn restore(&self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if self.embedding.dim() != self.model.gnn.dim_in {
            return Err(Error::Checkpoint(format!(
                "embedding width {} differs from model input width {}",
                self.embedding.dim(),
                self.model.gnn.dim_in
            )));
        }
        let mut model = Model::init(self.model.clone(), self.seed)
            .map_err(|e| Error::Checkpoint(format!("invalid model configuration: {e}")))?;
        model.set_flat(&self.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelMode;
    use crate::gnn::GnnConfig;
    use crate::verifier::Ablation;

    fn model() -> Model {
        let gnn = GnnConfig {
            layers: 2,
            heads: 2,
            dim_in: 8,
            dim_hidden: 8,
            leaky_slope: 0.2,
        };
        Model::init(
            ModelConfig {
                gnn,
                ablation: Ablation::Full,
                labels: LabelMode::Hover.labels(),
            },
            3,
        )
        .unwrap()
    }

    fn embedding() -> EmbeddingConfig {
        EmbeddingConfig::Hashed { dim: 8, seed: 1 }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = model();
        Checkpoint::new(&m, 3, embedding(), 20).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap().restore().unwrap();
        for (a, b) in m.flat().iter().zip(back.flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = model();
        let mut c = Checkpoint::new(&m, 3, embedding(), 20);
        c.params.pop();
        assert!(matches!(c.restore(), Err(Error::Checkpoint(_))));
        let mut c = Checkpoint::new(&m, 3, embedding(), 20);
        c.model.gnn.dim_hidden = 16;
        assert!(matches!(c.restore(), Err(Error::Checkpoint(_))));
        let mut c = Checkpoint::new(&m, 3, embedding(), 20);
        c.version = 2;
        assert!(matches!(c.restore(), Err(Error::Checkpoint(_))));
        let c = Checkpoint::new(&m, 3, EmbeddingConfig::Hashed { dim: 4, seed: 1 }, 20);
        assert!(matches!(c.restore(), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn garbage_file_is_a_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
