//! Multi-hop claim verification over knowledge-augmented relation graphs.
//!
//! The pipeline extracts `(entity, relation, entity)` triplets from claim and
//! evidence text, builds one relation graph per sample, fuses it with an
//! edge-featured multi-head graph attention network, and classifies the
//! claim node's final state.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod gnn;
pub mod graph;
pub mod pipeline;
pub mod remote;
pub mod tensor;
pub mod text;
pub mod verifier;

pub use error::{Error, Result};
