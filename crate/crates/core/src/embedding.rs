//! Fixed-width text features for graph nodes and edges.
//!
//! The offline default is a signed feature-hashing bag of tokens, specified
//! bit-exactly so other implementations can reproduce it:
//!
//! 1. lowercase the text and split it on every non-alphanumeric character;
//! 2. for each non-empty token, `h = fnv1a_64(utf8 bytes) ^ seed`;
//! 3. add `+1` (bit 63 of `h` clear) or `-1` (bit 63 set) to bucket `h % dim`;
//! 4. L2-normalize; text without tokens maps to the zero vector.
//!
//! FNV-1a uses offset basis `0xcbf29ce484222325` and prime `0x100000001b3`.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::remote::{EndpointConfig, JsonEndpoint};

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_SEED: u64 = 42;

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f64>>;

    /// Stable description of the configuration, used in cache keys.
    fn fingerprint(&self) -> String;
}

pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedBagOfTokens {
    dim: usize,
    seed: u64,
}

impl HashedBagOfTokens {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(Self { dim, seed })
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let h = fnv1a_64(token.as_bytes()) ^ self.seed;
            let bucket = (h % self.dim as u64) as usize;
            v[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
        }
        l2_normalize(&mut v);
        v
    }
}

impl EmbeddingProvider for HashedBagOfTokens {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed_text(text))
    }

    fn fingerprint(&self) -> String {
        format!("hashed:fnv1a64:d{}:s{}", self.dim, self.seed)
    }
}

/// Client for an encoder service returning one vector per input
/// (`{"data": [{"embedding": [...]}]}` or `{"embedding": [...]}`), mean-pooled
/// on the service side. Vectors are L2-normalized here.
#[derive(Debug, Clone)]
pub struct RemoteEncoder {
    endpoint: JsonEndpoint,
    model: String,
    dim: usize,
}

impl RemoteEncoder {
    pub fn new(endpoint: EndpointConfig, model: String, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(Self {
            endpoint: JsonEndpoint::new(endpoint)?,
            model,
            dim,
        })
    }
}

impl EmbeddingProvider for RemoteEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if tokenize(text).next().is_none() {
            return Ok(vec![0.0; self.dim]);
        }
        let reply = self
            .endpoint
            .post(&json!({"model": self.model, "input": text}))?;
        let raw = reply.body["data"][0]["embedding"]
            .as_array()
            .or_else(|| reply.body["embedding"].as_array())
            .ok_or_else(|| Error::Remote {
                status: 200,
                message: "response carries no embedding array".into(),
            })?;
        let mut v = raw
            .iter()
            .map(|x| x.as_f64().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::Numerical("embedding contains a non-number".into()))?;
        if v.len() != self.dim {
            return Err(Error::invalid(format!(
                "encoder returned {} dimensions, expected {}",
                v.len(),
                self.dim
            )));
        }
        l2_normalize(&mut v);
        Ok(v)
    }

    fn fingerprint(&self) -> String {
        format!(
            "remote:{}:{}:d{}",
            self.endpoint.config().url(),
            self.model,
            self.dim
        )
    }
}

/// Serializable choice of provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    Hashed {
        dim: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    Remote {
        dim: usize,
        model: String,
        #[serde(default)]
        endpoint: EndpointConfig,
    },
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hashed {
            dim: DEFAULT_DIM,
            seed: DEFAULT_SEED,
        }
    }
}

impl EmbeddingConfig {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingConfig::Hashed { dim, .. } | EmbeddingConfig::Remote { dim, .. } => *dim,
        }
    }

    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self {
            EmbeddingConfig::Hashed { dim, seed } => Box::new(HashedBagOfTokens::new(*dim, *seed)?),
            EmbeddingConfig::Remote {
                dim,
                model,
                endpoint,
            } => Box::new(RemoteEncoder::new(endpoint.clone(), model.clone(), *dim)?),
        })
    }
}

pub(crate) fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}
