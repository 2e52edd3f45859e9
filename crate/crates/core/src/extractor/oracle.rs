use super::{format_triplets, ExtractionResult, Triplet};
use crate::text::mentions;

/// Deterministic stand-in for an LLM: returns the gold triplets whose head and
/// tail both occur in `text` (case-insensitive). The raw response is the
/// formatted triplet list, so the result replays through the parser.
pub fn extract_oracle(text: &str, gold: &[Triplet]) -> ExtractionResult {
    let hits: Vec<Triplet> = gold
        .iter()
        .filter(|t| mentions(text, t.head()) && mentions(text, t.tail()))
        .cloned()
        .collect();
    ExtractionResult::from_raw(format_triplets(&hits))
}
