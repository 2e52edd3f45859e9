//! Content-addressed artifact cache.
//!
//! Layout: `<root>/<stage>/<key[0..2]>/<key>.json`, where `key` is the
//! SHA-256 (hex) of the sample id and the fingerprints of every component
//! that shaped the artifact. Each file is an envelope
//! `{"key", "sha256", "payload"}`; the digest covers the compact JSON of the
//! payload. A stage run writes `<root>/<stage>/manifest.json` listing hits,
//! misses and entries rebuilt after failing verification. Files are written
//! to a temporary name and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Triplets,
    Graphs,
}

impl Stage {
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Triplets => "triplets",
            Stage::Graphs => "graphs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheManifest {
    pub stage: Option<Stage>,
    pub hits: Vec<String>,
    pub misses: Vec<String>,
    /// Entries that existed but failed verification and were recomputed.
    pub rebuilt: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactCache {
    root: PathBuf,
}

enum Lookup<T> {
    Hit(T),
    Miss,
    Corrupt(String),
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl ArtifactCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Cache key over length-prefixed parts.
    pub fn key(parts: &[&str]) -> String {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn path(&self, stage: Stage, key: &str) -> PathBuf {
        self.root
            .join(stage.dir_name())
            .join(&key[..2])
            .join(format!("{key}.json"))
    }

    fn lookup<T: DeserializeOwned>(&self, stage: Stage, key: &str) -> Lookup<T> {
        let path = self.path(stage, key);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Lookup::Miss,
            Err(e) => return Lookup::Corrupt(e.to_string()),
        };
        let check = || -> std::result::Result<T, String> {
            let env: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            if env["key"].as_str() != Some(key) {
                return Err("key mismatch".into());
            }
            let payload = env.get("payload").ok_or("missing payload")?;
            let compact = serde_json::to_string(payload).map_err(|e| e.to_string())?;
            if env["sha256"].as_str() != Some(digest(&compact).as_str()) {
                return Err("digest mismatch".into());
            }
            serde_json::from_value(payload.clone()).map_err(|e| e.to_string())
        };
        match check() {
            Ok(t) => Lookup::Hit(t),
            Err(why) => Lookup::Corrupt(why),
        }
    }

    pub fn load<T: DeserializeOwned>(&self, stage: Stage, key: &str) -> Option<T> {
        match self.lookup(stage, key) {
            Lookup::Hit(t) => Some(t),
            _ => None,
        }
    }

    pub fn store<T: Serialize>(&self, stage: Stage, key: &str, value: &T) -> Result<()> {
        let path = self.path(stage, key);
        let payload = serde_json::to_value(value)?;
        let compact = serde_json::to_string(&payload)?;
        let env = json!({"key": key, "sha256": digest(&compact), "payload": payload});
        write_atomic(&path, serde_json::to_string(&env)?.as_bytes())
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile_in(dir, path)?;
    tmp.1.write_all(bytes).map_err(|e| Error::io(&tmp.0, e))?;
    tmp.1.sync_all().map_err(|e| Error::io(&tmp.0, e))?;
    drop(tmp.1);
    std::fs::rename(&tmp.0, path).map_err(|e| Error::io(path, e))
}

fn tempfile_in(dir: &Path, target: &Path) -> Result<(PathBuf, std::fs::File)> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    Ok((tmp, f))
}

/// Returns one artifact per sample, computing (in parallel) only those the
/// cache cannot serve. `fingerprints` must describe every component that
/// influences the artifact.
pub fn cache_artifacts<T, F>(
    samples: &[Sample],
    stage: Stage,
    cache: &ArtifactCache,
    fingerprints: &[&str],
    compute: F,
) -> Result<(Vec<T>, CacheManifest)>
where
    T: Serialize + DeserializeOwned + Send,
    F: Fn(&Sample) -> Result<T> + Sync,
{
    enum Outcome {
        Hit,
        Miss,
        Rebuilt,
    }
    let results: Vec<Result<(T, Outcome)>> = samples
        .par_iter()
        .map(|s| {
            let mut parts = vec![s.id.as_str()];
            parts.extend_from_slice(fingerprints);
            let key = ArtifactCache::key(&parts);
            let outcome = match cache.lookup::<T>(stage, &key) {
                Lookup::Hit(t) => return Ok((t, Outcome::Hit)),
                Lookup::Miss => Outcome::Miss,
                Lookup::Corrupt(why) => {
                    log::warn!("cache entry for {} is unusable ({why}); rebuilding", s.id);
                    Outcome::Rebuilt
                }
            };
            let value = compute(s)?;
            cache.store(stage, &key, &value)?;
            Ok((value, outcome))
        })
        .collect();
    let mut manifest = CacheManifest {
        stage: Some(stage),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(samples.len());
    for (s, r) in samples.iter().zip(results) {
        let (value, outcome) = r?;
        match outcome {
            Outcome::Hit => manifest.hits.push(s.id.clone()),
            Outcome::Miss => manifest.misses.push(s.id.clone()),
            Outcome::Rebuilt => manifest.rebuilt.push(s.id.clone()),
        }
        out.push(value);
    }
    let path = cache.root.join(stage.dir_name()).join("manifest.json");
    write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok((out, manifest))
}
