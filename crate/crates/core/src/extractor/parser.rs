use std::collections::HashSet;

use super::{check_fields, MalformedReason, MalformedSpan, Triplet};

/// Scans free text for `(head, relation, tail)` tuples.
///
/// A tuple-shaped region is a balanced parenthesized span with at least one
/// top-level comma. Parentheticals without a comma (`(e1)`, `(see above)`) are
/// prose and are searched for nested tuples instead. Unbalanced `(` are
/// ignored. Every tuple-shaped region ends up either as a triplet or as a
/// [`MalformedSpan`]; the function never fails.
pub fn parse_triplets(raw: &str) -> (Vec<Triplet>, Vec<MalformedSpan>) {
    let bytes = raw.as_bytes();
    let closing = match_parens(bytes);
    let mut triplets = Vec::new();
    let mut spans = Vec::new();
    let mut seen = HashSet::new();

    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'(' {
            i += 1;
            continue;
        }
        let Some(close) = closing[i] else {
            i += 1;
            continue;
        };
        let inner = &raw[i + 1..close];
        let fields = split_top_level(inner);
        if fields.len() < 2 {
            i += 1;
            continue;
        }
        let span = |reason| MalformedSpan {
            offset: i,
            length: close + 1 - i,
            reason,
        };
        if fields.len() != 3 {
            spans.push(span(MalformedReason::FieldCount {
                found: fields.len(),
            }));
        } else {
            match check_fields(fields[0], fields[1], fields[2]) {
                Ok((head, relation, tail)) => {
                    let t = Triplet {
                        head,
                        relation,
                        tail,
                        source: Default::default(),
                    };
                    if seen.insert(t.key()) {
                        triplets.push(t);
                    } else {
                        spans.push(span(MalformedReason::Duplicate));
                    }
                }
                Err(reason) => spans.push(span(reason)),
            }
        }
        i = close + 1;
    }
    (triplets, spans)
}

/// One `(head, relation, tail)` per line.
pub fn format_triplets(triplets: &[Triplet]) -> String {
    let mut out = String::new();
    for t in triplets {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out
}

/// For each `(` byte, the index of its matching `)`, if balanced.
fn match_parens(bytes: &[u8]) -> Vec<Option<usize>> {
    let mut closing = vec![None; bytes.len()];
    let mut stack = Vec::new();
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'(' => stack.push(i),
            b')' => {
                if let Some(open) = stack.pop() {
                    closing[open] = Some(i);
                }
            }
            _ => {}
        }
    }
    closing
}

fn split_top_level(inner: &str) -> Vec<&str> {
    let mut fields = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, b) in inner.bytes().enumerate() {
        match b {
            b'(' => depth += 1,
            b')' => depth = depth.saturating_sub(1),
            b',' if depth == 0 => {
                fields.push(&inner[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    fields.push(&inner[start..]);
    fields
}
