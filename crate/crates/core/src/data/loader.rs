//! JSONL dataset readers.
//!
//! `fever_jsonl` lines: `{"id", "claim", "label", "evidence", "gold_evidence"?}`
//! where `label` is `SUPPORTS` / `REFUTES` / `NOT ENOUGH INFO`, each evidence
//! entry is `[title, line, text]`, `{"title", "line", "text"}`,
//! `{"id", "text"}` or a bare string, and `gold_evidence` lists
//! `[title, line]` pairs or ids.
//!
//! `hover_jsonl` lines: `{"uid", "claim", "label", "evidence",
//! "supporting_facts"?}` with `label` `SUPPORTED` / `NOT_SUPPORTED`, evidence
//! entries as above, and `supporting_facts` as `[title, sentence]` pairs.
//!
//! Evidence built from `(title, line)` gets the id `"title:line"`; bare
//! strings get `"e<k>"`.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{EvidencePiece, LabelMode, Sample};
use crate::error::{Error, Result};

/// Above this share of malformed lines a file is rejected.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    FeverJsonl,
    HoverJsonl,
    #[default]
    NativeJsonl,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fever_jsonl" => Ok(Self::FeverJsonl),
            "hover_jsonl" => Ok(Self::HoverJsonl),
            "native_jsonl" => Ok(Self::NativeJsonl),
            _ => Err(Error::Config(format!("unknown dataset format {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLine {
    /// 1-based.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub samples: Vec<Sample>,
    pub skipped: Vec<SkippedLine>,
}

/// Reads one JSON object per line, mapping labels onto `mode`'s label set.
/// Blank lines are ignored; malformed lines are skipped and reported.
pub fn load_dataset(path: &Path, format: DatasetFormat, mode: LabelMode) -> Result<LoadedDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let parsed = serde_json::from_str::<Value>(&line)
            .map_err(|e| e.to_string())
            .and_then(|v| parse_record(&v, format, mode))
            .and_then(|s| {
                if seen.insert(s.id.clone()) {
                    Ok(s)
                } else {
                    Err(format!("duplicate id {:?}", s.id))
                }
            });
        match parsed {
            Ok(s) => samples.push(s),
            Err(reason) => {
                log::warn!("{}:{}: skipped: {reason}", path.display(), idx + 1);
                skipped.push(SkippedLine {
                    line: idx + 1,
                    reason,
                });
            }
        }
    }
    if total > 0 && skipped.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!(
                "{} of {total} lines are malformed (first at line {})",
                skipped.len(),
                skipped[0].line
            ),
        });
    }
    Ok(LoadedDataset { samples, skipped })
}

/// Writes samples as native JSONL.
pub fn write_native(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut out = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

fn parse_record(v: &Value, format: DatasetFormat, mode: LabelMode) -> std::result::Result<Sample, String> {
    let mut sample = match format {
        DatasetFormat::NativeJsonl => serde_json::from_value::<Sample>(v.clone()).map_err(|e| e.to_string())?,
        DatasetFormat::FeverJsonl | DatasetFormat::HoverJsonl => {
            let id_key = if format == DatasetFormat::FeverJsonl { "id" } else { "uid" };
            let id = match v.get(id_key).or_else(|| v.get("id")) {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                _ => return Err(format!("missing {id_key}")),
            };
            let claim = v["claim"].as_str().ok_or("missing claim")?.to_string();
            let label = v["label"].as_str().ok_or("missing label")?.to_string();
            let evidence = match &v["evidence"] {
                Value::Null => Vec::new(),
                Value::Array(items) => items
                    .iter()
                    .enumerate()
                    .map(|(k, e)| evidence_piece(k, e))
                    .collect::<std::result::Result<_, _>>()?,
                _ => return Err("evidence is not a list".into()),
            };
            let gold_key = if format == DatasetFormat::FeverJsonl {
                "gold_evidence"
            } else {
                "supporting_facts"
            };
            let evidence_gold_ids = match &v[gold_key] {
                Value::Null => None,
                Value::Array(items) => Some(
                    items
                        .iter()
                        .map(evidence_ref)
                        .collect::<std::result::Result<_, _>>()?,
                ),
                _ => return Err(format!("{gold_key} is not a list")),
            };
            Sample {
                id,
                claim,
                evidence,
                label,
                gold_triplets: None,
                evidence_gold_ids,
                evidence_ok: v["evidence_ok"].as_bool(),
            }
        }
    };
    if sample.id.is_empty() {
        return Err("empty id".into());
    }
    if sample.claim.trim().is_empty() {
        return Err("empty claim".into());
    }
    sample.label = mode
        .canonical(&sample.label)
        .ok_or_else(|| format!("label {:?} not in the {mode:?} label set", sample.label))?
        .to_string();
    Ok(sample)
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn evidence_piece(k: usize, e: &Value) -> std::result::Result<EvidencePiece, String> {
    let bad = || format!("unrecognized evidence entry {k}");
    match e {
        Value::String(text) => Ok(EvidencePiece {
            id: format!("e{k}"),
            text: text.clone(),
        }),
        Value::Array(parts) => match parts.as_slice() {
            [title, line, text] => Ok(EvidencePiece {
                id: format!("{}:{}", scalar(title).ok_or_else(bad)?, scalar(line).ok_or_else(bad)?),
                text: text.as_str().ok_or_else(bad)?.to_string(),
            }),
            [id, text] => Ok(EvidencePiece {
                id: scalar(id).ok_or_else(bad)?,
                text: text.as_str().ok_or_else(bad)?.to_string(),
            }),
            _ => Err(bad()),
        },
        Value::Object(map) => {
            let text = map.get("text").and_then(Value::as_str).ok_or_else(bad)?.to_string();
            let id = match (map.get("id"), map.get("title"), map.get("line")) {
                (Some(id), _, _) => scalar(id).ok_or_else(bad)?,
                (None, Some(t), Some(l)) => format!("{}:{}", scalar(t).ok_or_else(bad)?, scalar(l).ok_or_else(bad)?),
                _ => format!("e{k}"),
            };
            Ok(EvidencePiece { id, text })
        }
        _ => Err(bad()),
    }
}

fn evidence_ref(v: &Value) -> std::result::Result<String, String> {
    match v {
        Value::Array(parts) if parts.len() == 2 => Ok(format!(
            "{}:{}",
            scalar(&parts[0]).ok_or("bad evidence reference")?,
            scalar(&parts[1]).ok_or("bad evidence reference")?
        )),
        other => scalar(other).ok_or_else(|| "bad evidence reference".to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn fever_lines() {
        let f = write(&[
            r#"{"id": 7, "claim": "Nikolaj plays in a show.", "label": "SUPPORTS", "evidence": [["Nikolaj", 0, "Nikolaj is an actor."], "loose text"], "gold_evidence": [["Nikolaj", 0]]}"#,
            "",
            r#"{"id": 8, "claim": "X.", "label": "NOT ENOUGH INFO", "evidence": []}"#,
        ]);
        let d = load_dataset(f.path(), DatasetFormat::FeverJsonl, LabelMode::Fever).unwrap();
        assert_eq!(d.samples.len(), 2);
        let s = &d.samples[0];
        assert_eq!(s.id, "7");
        assert_eq!(s.label, "Supported");
        assert_eq!(s.evidence[0].id, "Nikolaj:0");
        assert_eq!(s.evidence[1].id, "e1");
        assert_eq!(s.evidence_gold_ids.as_deref(), Some(&["Nikolaj:0".to_string()][..]));
        assert_eq!(d.samples[1].label, "NEI");
    }

    #[test]
    fn hover_lines() {
        let f = write(&[
            r#"{"uid": "a1", "claim": "C.", "label": "NOT_SUPPORTED", "evidence": [{"title": "T", "line": 2, "text": "t"}], "supporting_facts": [["T", 2]]}"#,
        ]);
        let d = load_dataset(f.path(), DatasetFormat::HoverJsonl, LabelMode::Hover).unwrap();
        assert_eq!(d.samples[0].label, "Not-Supported");
        assert_eq!(d.samples[0].evidence[0].id, "T:2");
    }

    #[test]
    fn malformed_lines_are_counted() {
        let good = r#"{"id": "x", "claim": "c", "label": "Supported"}"#;
        let mut lines = Vec::new();
        for i in 0..19 {
            lines.push(good.replace("\"x\"", &format!("\"x{i}\"")));
        }
        lines.push("{not json".to_string());
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let d = load_dataset(write(&refs).path(), DatasetFormat::NativeJsonl, LabelMode::Hover).unwrap();
        assert_eq!(d.samples.len(), 19);
        assert_eq!(d.skipped[0].line, 20);

        lines.push(good.to_string());
        lines.push(good.to_string());
        lines.push(r#"{"id": "y", "claim": "c", "label": "NEI"}"#.to_string());
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        // Bad JSON, a duplicate id and an unknown label: 3 of 23 lines.
        assert!(matches!(
            load_dataset(write(&refs).path(), DatasetFormat::NativeJsonl, LabelMode::Hover),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_dataset(Path::new("/nonexistent/x.jsonl"), DatasetFormat::NativeJsonl, LabelMode::Hover),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn native_round_trip() {
        let samples = vec![Sample {
            id: "s1".into(),
            claim: "A met B.".into(),
            evidence: vec![EvidencePiece {
                id: "e0".into(),
                text: "A met B.".into(),
            }],
            label: "Supported".into(),
            gold_triplets: Some(vec![crate::extractor::Triplet::new("A", "met", "B").unwrap()]),
            evidence_gold_ids: Some(vec!["e0".into()]),
            evidence_ok: None,
        }];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_native(f.path(), &samples).unwrap();
        let back = load_dataset(f.path(), DatasetFormat::NativeJsonl, LabelMode::Hover).unwrap();
        assert_eq!(back.samples, samples);
    }
}
