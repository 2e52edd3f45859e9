//! Samples, label sets, dataset loading, synthetic corpora and the artifact
//! cache.

mod cache;
mod loader;
mod synthetic;

pub use cache::{cache_artifacts, ArtifactCache, CacheManifest, Stage};
pub(crate) use cache::write_atomic;
pub use loader::{load_dataset, write_native, DatasetFormat, LoadedDataset, SkippedLine};
pub use synthetic::{generate_synthetic, SyntheticSpec, RELATION_PHRASES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::Triplet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidencePiece {
    pub id: String,
    pub text: String,
}

/// One claim with its evidence and gold annotations.
///
/// Native JSONL stores one `Sample` per line:
/// `id` (string, unique per file), `claim` (string), `evidence` (list of
/// `{"id", "text"}`), `label` (string from the active label set), and the
/// optional `gold_triplets` (list of `{"head", "relation", "tail"}` objects
/// or `[head, relation, tail]` arrays), `evidence_gold_ids` (list of
/// evidence ids) and `evidence_ok` (boolean evidence-selection verdict).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub claim: String,
    #[serde(default)]
    pub evidence: Vec<EvidencePiece>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_triplets: Option<Vec<Triplet>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_gold_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_ok: Option<bool>,
}

impl Sample {
    pub fn evidence_texts(&self) -> Vec<String> {
        self.evidence.iter().map(|e| e.text.clone()).collect()
    }
}

/// Which verdict classes a dataset uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Supported, Refuted, NEI.
    Fever,
    /// Supported, Not-Supported.
    #[default]
    Hover,
}

impl LabelMode {
    pub fn labels(self) -> Vec<String> {
        let names: &[&str] = match self {
            LabelMode::Fever => &["Supported", "Refuted", "NEI"],
            LabelMode::Hover => &["Supported", "Not-Supported"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Maps dataset label spellings (`SUPPORTS`, `NOT ENOUGH INFO`,
    /// `NOT_SUPPORTED`, ...) onto the canonical names.
    pub fn canonical(self, raw: &str) -> Option<&'static str> {
        let key: String = raw
            .trim()
            .to_lowercase()
            .chars()
            .map(|c| if c == '_' || c == '-' { ' ' } else { c })
            .collect();
        let key = key.split_whitespace().collect::<Vec<_>>().join(" ");
        match (self, key.as_str()) {
            (_, "supported" | "supports") => Some("Supported"),
            (LabelMode::Fever, "refuted" | "refutes") => Some("Refuted"),
            (LabelMode::Fever, "nei" | "not enough info" | "not enough information") => Some("NEI"),
            (LabelMode::Hover, "not supported" | "refuted" | "refutes") => Some("Not-Supported"),
            _ => None,
        }
    }

    pub fn index_of(self, label: &str) -> Result<usize> {
        let canon = self
            .canonical(label)
            .ok_or_else(|| Error::invalid(format!("label {label:?} is not in the {self:?} label set")))?;
        Ok(self.labels().iter().position(|l| l == canon).expect("canonical names are listed"))
    }
}
