//! Seeded multi-hop corpora.
//!
//! Each sample is a relation chain `e0 -r1-> e1 -> ... -> eh` written as one
//! `"<A> <rel> <B>."` sentence per link, and the claim
//! `"<e0> is connected to <eh>."`. Corrupted (Not-Supported) samples replace
//! the head of the link after bridge `e_j` with a fresh entity `x`, which
//! cuts the path.
//!
//! Two balancing sentences make entity mention counts identical across
//! classes, so the label cannot be read off from counts alone:
//! supported samples add `(z, r, w1)` and `(z, r, w2)`; corrupted ones add
//! `(e_j, r, w1)` and `(x, r, w2)`. Any further distractors are about
//! unrelated entity pairs. Sentence order is shuffled.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvidencePiece, Sample};
use crate::error::{Error, Result};
use crate::extractor::{Triplet, TripletSource};

pub const RELATION_PHRASES: [&str; 16] = [
    "founded", "directed", "married", "owns", "visited", "employs", "designed", "replaced",
    "funded", "studied", "painted", "coached", "hired", "rescued", "mentored", "sponsored",
];

const CLAIM_LINK: &str = "is connected to";

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "ren", "tor", "vas", "pel", "dun", "shi", "gar", "mo", "zel", "bri", "qua",
    "fen", "hol", "nyx", "tes", "ulm", "wik",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub hops: usize,
    pub entity_vocab_size: usize,
    pub relation_vocab_size: usize,
    pub seed: u64,
    /// At least 2; the first two are the balancing sentences.
    pub distractor_evidence_per_sample: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            hops: 2,
            entity_vocab_size: 400,
            relation_vocab_size: 12,
            seed: 7,
            distractor_evidence_per_sample: 2,
        }
    }
}

impl SyntheticSpec {
    fn entities_per_sample(&self) -> usize {
        // Chain, x/z, w1, w2, then two per unrelated distractor.
        self.hops + 1 + 3 + 2 * (self.distractor_evidence_per_sample - 2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.hops) {
            return Err(Error::Config(format!("hops must be 2..=4, got {}", self.hops)));
        }
        if self.distractor_evidence_per_sample < 2 {
            return Err(Error::Config("distractor_evidence_per_sample must be at least 2".into()));
        }
        if self.relation_vocab_size == 0 || self.relation_vocab_size > RELATION_PHRASES.len() {
            return Err(Error::Config(format!(
                "relation_vocab_size must be 1..={}",
                RELATION_PHRASES.len()
            )));
        }
        if self.entity_vocab_size < self.entities_per_sample() {
            return Err(Error::Config(format!(
                "entity_vocab_size must be at least {}",
                self.entities_per_sample()
            )));
        }
        if self.entity_vocab_size > 4000 {
            return Err(Error::Config("entity_vocab_size is capped at 4000".into()));
        }
        Ok(())
    }
}

/// Capitalized pseudo-words, none a substring of another name or of any
/// fixed phrase used in the corpus.
fn entity_names(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let fixed: Vec<String> = RELATION_PHRASES
        .iter()
        .chain(std::iter::once(&CLAIM_LINK))
        .map(|s| s.to_string())
        .collect();
    let mut names: Vec<String> = Vec::with_capacity(n);
    let mut seen = HashSet::new();
    while names.len() < n {
        let syllables = rng.random_range(2..=3);
        let word: String = (0..syllables)
            .map(|_| *SYLLABLES.choose(rng).expect("non-empty"))
            .collect();
        let clash = seen.contains(&word)
            || fixed.iter().any(|f| f.contains(&word))
            || names
                .iter()
                .any(|m| m.to_lowercase().contains(&word) || word.contains(&m.to_lowercase()));
        if clash {
            continue;
        }
        seen.insert(word.clone());
        let mut chars = word.chars();
        let first = chars.next().expect("non-empty").to_ascii_uppercase();
        names.push(std::iter::once(first).chain(chars).collect());
    }
    names
}

/// Deterministic corpus for `spec`; labels alternate starting with
/// Supported, so any even-sized prefix is exactly balanced.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = entity_names(spec.entity_vocab_size, &mut rng);
    let relations = &RELATION_PHRASES[..spec.relation_vocab_size];
    let h = spec.hops;
    let mut out = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let supported = i % 2 == 0;
        let picked: Vec<&String> = vocab.choose_multiple(&mut rng, spec.entities_per_sample()).collect();
        let (chain, extra) = picked.split_at(h + 1);
        let link_rel: Vec<&str> = (0..h).map(|_| *relations.choose(&mut rng).expect("non-empty")).collect();
        let mut facts: Vec<(&str, &str, &str)> = Vec::new();
        let mut gold_links = Vec::new();
        let (x_or_z, w1, w2) = (extra[0].as_str(), extra[1].as_str(), extra[2].as_str());
        if supported {
            for k in 0..h {
                gold_links.push(facts.len());
                facts.push((chain[k], link_rel[k], chain[k + 1]));
            }
            let r1 = *relations.choose(&mut rng).expect("non-empty");
            let r2 = *relations.choose(&mut rng).expect("non-empty");
            facts.push((x_or_z, r1, w1));
            facts.push((x_or_z, r2, w2));
        } else {
            let bridge = rng.random_range(1..h);
            for k in 0..h {
                let head = if k == bridge { x_or_z } else { chain[k].as_str() };
                gold_links.push(facts.len());
                facts.push((head, link_rel[k], chain[k + 1]));
            }
            let r1 = *relations.choose(&mut rng).expect("non-empty");
            let r2 = *relations.choose(&mut rng).expect("non-empty");
            facts.push((chain[bridge], r1, w1));
            facts.push((x_or_z, r2, w2));
        }
        for q in 0..spec.distractor_evidence_per_sample - 2 {
            let r = *relations.choose(&mut rng).expect("non-empty");
            facts.push((extra[3 + 2 * q], r, extra[4 + 2 * q]));
        }

        let mut order: Vec<usize> = (0..facts.len()).collect();
        order.shuffle(&mut rng);
        let mut evidence = Vec::with_capacity(facts.len());
        let mut triplets = Vec::with_capacity(facts.len());
        let mut gold_ids = Vec::new();
        for (slot, &f) in order.iter().enumerate() {
            let (a, r, b) = facts[f];
            let id = format!("s{slot}");
            if gold_links.contains(&f) {
                gold_ids.push((f, id.clone()));
            }
            evidence.push(EvidencePiece {
                id,
                text: format!("{a} {r} {b}."),
            });
            triplets.push(Triplet::new(a, r, b)?.with_source(TripletSource::Evidence(slot)));
        }
        gold_ids.sort();
        out.push(Sample {
            id: format!("synth-{}-{i:06}", spec.seed),
            claim: format!("{} {CLAIM_LINK} {}.", chain[0], chain[h]),
            evidence,
            label: if supported { "Supported" } else { "Not-Supported" }.to_string(),
            gold_triplets: Some(triplets),
            evidence_gold_ids: Some(gold_ids.into_iter().map(|(_, id)| id).collect()),
            evidence_ok: None,
        });
    }
    Ok(out)
}
