//! Verdict classification on top of the fused claim representation, the
//! training loss, optimizers, and the training loop.

mod classifier;
mod model;
mod optim;
mod train;

pub use classifier::{argmax, classify, loss, ClassifierParams, ClassifierTrace, LossValue, PROB_FLOOR};
pub use model::{Ablation, Fusion, Model, ModelConfig, SeqAttParams, Trace};
pub use optim::{AdamSettings, Optimizer, OptimizerKind};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::RelationGraph;

/// A sample after graph construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub graph: RelationGraph,
    /// Index into the model's label list.
    pub label: usize,
    /// Evidence ids in evidence order.
    pub evidence_ids: Vec<String>,
    pub evidence_gold_ids: Option<Vec<String>>,
    /// Evidence-selection verdict supplied by the dataset, if any.
    pub evidence_ok: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label_index: usize,
    pub label: String,
    pub probs: Vec<f64>,
    /// One relevance score per evidence piece, in evidence order.
    pub evidence_scores: Vec<f64>,
}

/// Most probable label (lowest index on ties) with evidence diagnostics.
pub fn predict(model: &Model, graph: &RelationGraph) -> Result<Prediction> {
    if graph.is_empty() {
        return Err(Error::invalid("empty graph"));
    }
    let trace = model.forward(graph)?;
    let label_index = argmax(trace.probs());
    Ok(Prediction {
        label_index,
        label: model.config.labels[label_index].clone(),
        probs: trace.probs().to_vec(),
        evidence_scores: trace.evidence_scores(graph),
    })
}
