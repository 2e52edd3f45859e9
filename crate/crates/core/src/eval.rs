//! Accuracy, FEVER score and evaluation reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabelMode;
use crate::error::{Error, Result};
use crate::verifier::{predict, Example, Model, Prediction};

/// Evidence slots considered by the attention-based selector.
pub const EVIDENCE_SLOTS: usize = 5;

/// Label whose samples carry no evidence and always pass evidence selection.
pub const NEI_LABEL: &str = "NEI";

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::invalid("no samples"));
    }
    Ok(())
}

pub fn accuracy<T: PartialEq>(predictions: &[T], gold: &[T]) -> Result<f64> {
    check_lengths(predictions.len(), gold.len())?;
    let correct = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / gold.len() as f64)
}

/// Share of samples with the right label and an acceptable evidence set.
pub fn fever_score<T: PartialEq>(predictions: &[T], gold: &[T], evidence_ok: &[bool]) -> Result<f64> {
    check_lengths(predictions.len(), gold.len())?;
    check_lengths(evidence_ok.len(), gold.len())?;
    let hits = predictions
        .iter()
        .zip(gold)
        .zip(evidence_ok)
        .filter(|((p, g), ok)| p == g && **ok)
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

/// True iff every gold evidence id is among the `k` highest-scoring evidence
/// pieces (ties keep evidence order). Samples of the NEI class and samples
/// without gold evidence pass.
pub fn evidence_ok_top_k(
    scores: &[f64],
    evidence_ids: &[String],
    gold_ids: Option<&[String]>,
    is_nei: bool,
    k: usize,
) -> bool {
    let gold = match gold_ids {
        Some(g) if !is_nei => g,
        _ => return true,
    };
    let mut ranked: Vec<usize> = (0..scores.len().min(evidence_ids.len())).collect();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ranked.truncate(k);
    gold.iter()
        .all(|g| ranked.iter().any(|&i| &evidence_ids[i] == g))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub label: String,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

/// Where evidence-selection verdicts came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceSource {
    /// Top-5 evidence by claim attention.
    AttentionTop5,
    /// Flags shipped with the dataset.
    Dataset,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub fever_score: f64,
    pub per_class: Vec<ClassCounts>,
    pub evidence_source: EvidenceSource,
    pub config_fingerprint: String,
}

impl EvalReport {
    /// Builds a report from label indices.
    pub fn from_labels(
        labels: &[String],
        predicted: &[usize],
        gold: &[usize],
        evidence_ok: &[bool],
        evidence_source: EvidenceSource,
        config_fingerprint: &str,
    ) -> Result<Self> {
        let accuracy = accuracy(predicted, gold)?;
        let fever_score = fever_score(predicted, gold, evidence_ok)?;
        let mut per_class: Vec<ClassCounts> = labels
            .iter()
            .map(|l| ClassCounts {
                label: l.clone(),
                gold: 0,
                predicted: 0,
                correct: 0,
            })
            .collect();
        for (&p, &g) in predicted.iter().zip(gold) {
            if p >= labels.len() || g >= labels.len() {
                return Err(Error::invalid("label index out of range"));
            }
            per_class[g].gold += 1;
            per_class[p].predicted += 1;
            if p == g {
                per_class[g].correct += 1;
            }
        }
        Ok(Self {
            n: gold.len(),
            accuracy,
            fever_score,
            per_class,
            evidence_source,
            config_fingerprint: config_fingerprint.to_string(),
        })
    }

    /// Aligned plain-text rendering.
    pub fn table(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|c| c.label.len())
            .max()
            .unwrap_or(0)
            .max("class".len());
        let mut s = String::new();
        let _ = writeln!(s, "samples      {}", self.n);
        let _ = writeln!(s, "accuracy     {:.4}", self.accuracy);
        let _ = writeln!(s, "fever_score  {:.4}", self.fever_score);
        let _ = writeln!(
            s,
            "evidence     {}",
            serde_json::to_value(self.evidence_source)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default()
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<width$}  {:>8}  {:>9}  {:>7}", "class", "gold", "predicted", "correct");
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<width$}  {:>8}  {:>9}  {:>7}",
                c.label, c.gold, c.predicted, c.correct
            );
        }
        s
    }
}

/// One line of a precomputed predictions file (JSONL).
///
/// `predicted` and `gold` are label names in any accepted spelling. A missing
/// `evidence_ok` counts as correct evidence, matching a sample with no gold
/// evidence ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub predicted: String,
    pub gold: String,
    #[serde(default)]
    pub evidence_ok: Option<bool>,
}

/// Scores precomputed predictions.
pub fn evaluate_records(records: &[PredictionRecord], mode: LabelMode, config_fingerprint: &str) -> Result<EvalReport> {
    let mut predicted = Vec::with_capacity(records.len());
    let mut gold = Vec::with_capacity(records.len());
    let mut flagged = 0;
    let mut ok = Vec::with_capacity(records.len());
    for r in records {
        predicted.push(mode.index_of(&r.predicted)?);
        gold.push(mode.index_of(&r.gold)?);
        flagged += usize::from(r.evidence_ok.is_some());
        ok.push(r.evidence_ok.unwrap_or(true));
    }
    let source = if flagged == records.len() {
        EvidenceSource::Dataset
    } else {
        EvidenceSource::Mixed
    };
    EvalReport::from_labels(&mode.labels(), &predicted, &gold, &ok, source, config_fingerprint)
}

/// Runs the model over `examples` and scores the predictions.
pub fn evaluate(
    model: &Model,
    examples: &[Example],
    config_fingerprint: &str,
) -> Result<(EvalReport, Vec<Prediction>)> {
    let predictions: Vec<Prediction> = examples
        .par_iter()
        .map(|ex| predict(model, &ex.graph))
        .collect::<Result<_>>()?;
    let labels = &model.config.labels;
    let mut from_dataset = 0;
    let evidence_ok: Vec<bool> = examples
        .iter()
        .zip(&predictions)
        .map(|(ex, p)| match ex.evidence_ok {
            Some(flag) => {
                from_dataset += 1;
                flag
            }
            None => evidence_ok_top_k(
                &p.evidence_scores,
                &ex.evidence_ids,
                ex.evidence_gold_ids.as_deref(),
                labels.get(ex.label).is_some_and(|l| l == NEI_LABEL),
                EVIDENCE_SLOTS,
            ),
        })
        .collect();
    let source = match from_dataset {
        0 => EvidenceSource::AttentionTop5,
        n if n == examples.len() => EvidenceSource::Dataset,
        _ => EvidenceSource::Mixed,
    };
    let predicted: Vec<usize> = predictions.iter().map(|p| p.label_index).collect();
    let gold: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let report = EvalReport::from_labels(labels, &predicted, &gold, &evidence_ok, source, config_fingerprint)?;
    Ok((report, predictions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let pred = ["S", "R", "N", "S"];
        let gold = ["S", "R", "N", "R"];
        let ok = [true, false, true, true];
        assert_eq!(accuracy(&pred, &gold).unwrap(), 0.75);
        assert_eq!(fever_score(&pred, &gold, &ok).unwrap(), 0.5);
        assert_eq!(fever_score(&pred, &gold, &[false; 4]).unwrap(), 0.0);
    }

    #[test]
    fn prediction_records() {
        let rec = |p: &str, g: &str, ok: Option<bool>| PredictionRecord {
            id: None,
            predicted: p.into(),
            gold: g.into(),
            evidence_ok: ok,
        };
        let recs = [
            rec("SUPPORTS", "Supported", Some(true)),
            rec("REFUTES", "Refuted", Some(false)),
            rec("NEI", "NOT ENOUGH INFO", Some(true)),
            rec("Supported", "Refuted", Some(true)),
        ];
        let r = evaluate_records(&recs, LabelMode::Fever, "fp").unwrap();
        assert_eq!((r.accuracy, r.fever_score), (0.75, 0.5));
        assert_eq!(r.evidence_source, EvidenceSource::Dataset);
        let r = evaluate_records(&[rec("Supported", "Supported", None)], LabelMode::Hover, "").unwrap();
        assert_eq!(r.fever_score, 1.0);
        assert_eq!(r.evidence_source, EvidenceSource::Mixed);
        assert!(evaluate_records(&[rec("NEI", "Supported", None)], LabelMode::Hover, "").is_err());
    }

    #[test]
    fn degenerate_inputs() {
        assert!(accuracy::<u8>(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 2]).is_err());
        assert!(fever_score(&[1], &[1], &[true, true]).is_err());
        assert_eq!(accuracy(&[1, 2], &[1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn top_k_selection() {
        let ids: Vec<String> = (0..7).map(|i| format!("e{i}")).collect();
        let scores = [0.1, 0.9, 0.3, 0.05, 0.2, 0.6, 0.0];
        let gold = vec!["e1".to_string(), "e5".to_string()];
        assert!(evidence_ok_top_k(&scores, &ids, Some(&gold), false, 5));
        let gold = vec!["e6".to_string()];
        assert!(!evidence_ok_top_k(&scores, &ids, Some(&gold), false, 5));
        assert!(evidence_ok_top_k(&scores, &ids, Some(&gold), true, 5));
        assert!(evidence_ok_top_k(&scores, &ids, None, false, 5));
    }

    #[test]
    fn report_counts_and_table() {
        let labels = vec!["Supported".to_string(), "Not-Supported".to_string()];
        let r = EvalReport::from_labels(
            &labels,
            &[0, 1, 1],
            &[0, 0, 1],
            &[true, true, false],
            EvidenceSource::Dataset,
            "fp",
        )
        .unwrap();
        assert_eq!(r.per_class[0].gold + r.per_class[1].gold, 3);
        assert_eq!(r.per_class[1].predicted, 2);
        assert!((r.fever_score - 1.0 / 3.0).abs() < 1e-12);
        let t = r.table();
        assert!(t.contains("Not-Supported"));
        assert!(t.contains("dataset"));
    }

    proptest! {
        #[test]
        fn fever_is_bounded_by_accuracy(
            rows in prop::collection::vec((0u8..3, 0u8..3, any::<bool>()), 1..60)
        ) {
            let p: Vec<u8> = rows.iter().map(|r| r.0).collect();
            let g: Vec<u8> = rows.iter().map(|r| r.1).collect();
            let ok: Vec<bool> = rows.iter().map(|r| r.2).collect();
            let acc = accuracy(&p, &g).unwrap();
            prop_assert!(fever_score(&p, &g, &ok).unwrap() <= acc);
            prop_assert_eq!(fever_score(&p, &g, &vec![true; ok.len()]).unwrap(), acc);
        }

        #[test]
        fn flipping_evidence_to_true_never_hurts(
            rows in prop::collection::vec((0u8..3, 0u8..3, any::<bool>()), 1..40),
            flip in any::<prop::sample::Index>()
        ) {
            let p: Vec<u8> = rows.iter().map(|r| r.0).collect();
            let g: Vec<u8> = rows.iter().map(|r| r.1).collect();
            let mut ok: Vec<bool> = rows.iter().map(|r| r.2).collect();
            let before = fever_score(&p, &g, &ok).unwrap();
            ok[flip.index(rows.len())] = true;
            prop_assert!(fever_score(&p, &g, &ok).unwrap() >= before);
        }

        #[test]
        fn permutation_invariance(
            rows in prop::collection::vec((0u8..3, 0u8..3, any::<bool>()), 1..40),
            seed: u64
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut perm = rows.clone();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let split = |r: &[(u8, u8, bool)]| {
                (r.iter().map(|x| x.0).collect::<Vec<_>>(),
                 r.iter().map(|x| x.1).collect::<Vec<_>>(),
                 r.iter().map(|x| x.2).collect::<Vec<_>>())
            };
            let (p, g, ok) = split(&rows);
            let (p2, g2, ok2) = split(&perm);
            prop_assert_eq!(accuracy(&p, &g).unwrap(), accuracy(&p2, &g2).unwrap());
            prop_assert_eq!(fever_score(&p, &g, &ok).unwrap(), fever_score(&p2, &g2, &ok2).unwrap());
        }
    }
}
