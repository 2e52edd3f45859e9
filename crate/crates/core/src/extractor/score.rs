use serde::{Deserialize, Serialize};

use super::Triplet;
use crate::error::{Error, Result};

/// Confidences are clamped into `[CONFIDENCE_EPS, 1 - CONFIDENCE_EPS]` before logs.
pub const CONFIDENCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractorScore {
    /// Binary negative log-likelihood summed over extracted triplets.
    pub loss: f64,
    pub matched: usize,
    pub extracted: usize,
    pub gold: usize,
}

/// Scores an extraction against gold facts.
///
/// Each extracted triplet is labelled correct iff it equals some gold triplet
/// under normalized comparison; the loss is the binary cross-entropy of the
/// supplied confidences against those labels.
pub fn score_extraction(
    extracted: &[Triplet],
    gold: &[Triplet],
    confidences: &[f64],
) -> Result<ExtractorScore> {
    if extracted.len() != confidences.len() {
        return Err(Error::invalid(format!(
            "{} extracted triplets but {} confidences",
            extracted.len(),
            confidences.len()
        )));
    }
    if let Some(c) = confidences.iter().find(|c| !(**c > 0.0 && **c <= 1.0)) {
        return Err(Error::invalid(format!("confidence {c} outside (0, 1]")));
    }
    let gold_keys: std::collections::HashSet<_> = gold.iter().map(Triplet::key).collect();
    let mut loss = 0.0;
    let mut matched = 0;
    for (t, &c) in extracted.iter().zip(confidences) {
        let c = c.clamp(CONFIDENCE_EPS, 1.0 - CONFIDENCE_EPS);
        if gold_keys.contains(&t.key()) {
            matched += 1;
            loss -= c.ln();
        } else {
            loss -= (1.0 - c).ln();
        }
    }
    Ok(ExtractorScore {
        loss,
        matched,
        extracted: extracted.len(),
        gold: gold.len(),
    })
}
