//! Entity–relation–entity triplet extraction.
//!
//! Triplets come either from a chat-completion endpoint driven by a fixed
//! extraction prompt ([`extract_remote`]) or from gold annotations filtered to
//! what a text actually mentions ([`extract_oracle`]). Both paths go through
//! the same tolerant parser, so an [`ExtractionResult`] can always be replayed
//! from its raw response.

mod client;
mod oracle;
mod parser;
mod prompt;
mod score;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{normalize_display, normalize_key};

pub use client::{extract_remote, ChatClient, ChatConfig, Completion, LlmClient};
pub use oracle::extract_oracle;
pub use parser::{format_triplets, parse_triplets};
pub use prompt::{build_prompt, PROMPT_TEMPLATE};
pub use score::{score_extraction, ExtractorScore, CONFIDENCE_EPS};

/// Where a triplet was extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TripletSource {
    #[default]
    Claim,
    Evidence(usize),
}

/// A normalized `(head, relation, tail)` fact.
///
/// Fields hold the display form (original casing). Equality between facts is
/// decided on lowercase keys, see [`Triplet::same_fact`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Triplet {
    head: String,
    relation: String,
    tail: String,
    #[serde(default)]
    source: TripletSource,
}

impl Triplet {
    pub fn new(head: &str, relation: &str, tail: &str) -> Result<Self> {
        match check_fields(head, relation, tail) {
            Ok((head, relation, tail)) => Ok(Self {
                head,
                relation,
                tail,
                source: TripletSource::Claim,
            }),
            Err(reason) => Err(Error::invalid(format!(
                "triplet ({head}, {relation}, {tail}): {reason}"
            ))),
        }
    }

    pub fn with_source(mut self, source: TripletSource) -> Self {
        self.source = source;
        self
    }

    pub fn head(&self) -> &str {
        &self.head
    }

    pub fn relation(&self) -> &str {
        &self.relation
    }

    pub fn tail(&self) -> &str {
        &self.tail
    }

    pub fn source(&self) -> TripletSource {
        self.source
    }

    /// Lowercase `(head, relation, tail)` comparison key.
    pub fn key(&self) -> (String, String, String) {
        (
            self.head.to_lowercase(),
            self.relation.to_lowercase(),
            self.tail.to_lowercase(),
        )
    }

    /// Normalized equality, ignoring casing and source.
    pub fn same_fact(&self, other: &Triplet) -> bool {
        self.key() == other.key()
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

/// Accepts either `{"head": .., "relation": .., "tail": ..}` or `["h", "r", "t"]`.
impl<'de> Deserialize<'de> for Triplet {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Object {
                head: String,
                relation: String,
                tail: String,
                #[serde(default)]
                source: TripletSource,
            },
            Tuple(String, String, String),
        }
        let (h, r, t, source) = match Repr::deserialize(de)? {
            Repr::Object {
                head,
                relation,
                tail,
                source,
            } => (head, relation, tail, source),
            Repr::Tuple(h, r, t) => (h, r, t, TripletSource::Claim),
        };
        Triplet::new(&h, &r, &t)
            .map(|t| t.with_source(source))
            .map_err(serde::de::Error::custom)
    }
}

/// Why a tuple-shaped region did not become a triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MalformedReason {
    FieldCount { found: usize },
    EmptyField,
    HeadEqualsTail,
    /// Same normalized fact already parsed earlier in the response.
    Duplicate,
    /// The response contained no tuple-shaped region at all.
    Unparseable,
}

impl fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MalformedReason::FieldCount { found } => write!(f, "expected 3 fields, found {found}"),
            MalformedReason::EmptyField => f.write_str("empty field"),
            MalformedReason::HeadEqualsTail => f.write_str("head equals tail"),
            MalformedReason::Duplicate => f.write_str("duplicate triplet"),
            MalformedReason::Unparseable => f.write_str("no tuple found"),
        }
    }
}

/// Byte range of `raw` that looked like a tuple but was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedSpan {
    pub offset: usize,
    pub length: usize,
    pub reason: MalformedReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub triplets: Vec<Triplet>,
    pub raw_response: String,
    pub malformed_spans: Vec<MalformedSpan>,
}

impl ExtractionResult {
    /// Parses `raw` and wraps the outcome. A non-blank response without any
    /// tuple gets a single span covering all of it.
    pub fn from_raw(raw: String) -> Self {
        let (triplets, mut malformed_spans) = parse_triplets(&raw);
        if triplets.is_empty() && malformed_spans.is_empty() && !raw.trim().is_empty() {
            malformed_spans.push(MalformedSpan {
                offset: 0,
                length: raw.len(),
                reason: MalformedReason::Unparseable,
            });
        }
        Self {
            triplets,
            raw_response: raw,
            malformed_spans,
        }
    }

    pub fn with_source(mut self, source: TripletSource) -> Self {
        for t in &mut self.triplets {
            t.source = source;
        }
        self
    }
}

fn check_fields(
    head: &str,
    relation: &str,
    tail: &str,
) -> std::result::Result<(String, String, String), MalformedReason> {
    let (h, r, t) = (
        normalize_display(head),
        normalize_display(relation),
        normalize_display(tail),
    );
    if h.is_empty() || r.is_empty() || t.is_empty() {
        return Err(MalformedReason::EmptyField);
    }
    if normalize_key(&h) == normalize_key(&t) {
        return Err(MalformedReason::HeadEqualsTail);
    }
    Ok((h, r, t))
}
