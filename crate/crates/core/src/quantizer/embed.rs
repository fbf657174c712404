//! Text embedders: built-in feature hashing and an HTTP embedding service.

use std::hash::Hasher;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::CleanText;

pub const DEFAULT_EMBED_DIM: usize = 4096;
pub const MIN_EMBED_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    /// Set for zero-token inputs, which map to the zero vector.
    pub degenerate: bool,
}

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector {
            values: vec![0.0; dim],
            degenerate: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.values, &other.values)
    }

    /// Scale to unit length; a zero vector is returned as degenerate.
    pub fn normalized(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            let dim = values.len();
            return EmbeddingVector::zeros(dim);
        }
        EmbeddingVector {
            values: values.into_iter().map(|v| v / norm).collect(),
            degenerate: false,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderConfig {
    /// Signed feature hashing of term frequencies, L2-normalized.
    Hashed { dim: usize },
    /// `POST {texts: [..]}` returning `{vectors: [[..]]}`.
    External { url: String, dim: usize, timeout_ms: u64 },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hashed {
            dim: DEFAULT_EMBED_DIM,
        }
    }
}

impl EmbedderConfig {
    pub fn dim(&self) -> usize {
        match self {
            EmbedderConfig::Hashed { dim } | EmbedderConfig::External { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() < MIN_EMBED_DIM {
            return Err(Error::Config(format!(
                "embedding dim must be at least {MIN_EMBED_DIM}, got {}",
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn embed_batch(&self, texts: &[CleanText]) -> Result<Vec<EmbeddingVector>> {
        self.validate()?;
        match self {
            EmbedderConfig::Hashed { dim } => Ok(texts.iter().map(|t| hashed_embedding(t, *dim)).collect()),
            EmbedderConfig::External { url, dim, timeout_ms } => external_embeddings(url, *dim, *timeout_ms, texts),
        }
    }

    pub fn embed(&self, text: &CleanText) -> Result<EmbeddingVector> {
        Ok(self.embed_batch(std::slice::from_ref(text))?.remove(0))
    }
}

/// FNV-1a followed by the murmur3 finalizer. Raw FNV low bits barely change
/// between tokens that differ in one middle byte, and the bucket comes from
/// the low bits.
fn token_hash(token: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    let mut x = h.finish();
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^ (x >> 33)
}

pub fn hashed_embedding(text: &CleanText, dim: usize) -> EmbeddingVector {
    if text.tokens.is_empty() {
        return EmbeddingVector::zeros(dim);
    }
    let mut values = vec![0.0; dim];
    for token in &text.tokens {
        let h = token_hash(token);
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        values[bucket] += sign;
    }
    // Opposite-signed collisions can cancel exactly.
    EmbeddingVector::normalized(values)
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

fn external_embeddings(url: &str, dim: usize, timeout_ms: u64, texts: &[CleanText]) -> Result<Vec<EmbeddingVector>> {
    let joined: Vec<String> = texts.iter().map(CleanText::joined).collect();
    let pending: Vec<usize> = (0..texts.len()).filter(|&i| !texts[i].is_empty()).collect();
    let mut out: Vec<EmbeddingVector> = (0..texts.len()).map(|_| EmbeddingVector::zeros(dim)).collect();
    if pending.is_empty() {
        return Ok(out);
    }
    let transport = |message: String| Error::Transport {
        endpoint: url.to_string(),
        message,
    };
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(timeout_ms))
        .build()
        .map_err(|e| transport(e.to_string()))?;
    let body = EmbedRequest {
        texts: pending.iter().map(|&i| joined[i].as_str()).collect(),
    };
    let response = client
        .post(url)
        .json(&body)
        .send()
        .map_err(|e| transport(e.to_string()))?;
    if !response.status().is_success() {
        return Err(transport(format!("HTTP {}", response.status())));
    }
    let parsed: EmbedResponse = response.json().map_err(|e| transport(format!("bad response body: {e}")))?;
    if parsed.vectors.len() != pending.len() {
        return Err(transport(format!(
            "expected {} vectors, got {}",
            pending.len(),
            parsed.vectors.len()
        )));
    }
    for (&i, v) in pending.iter().zip(parsed.vectors) {
        if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
            return Err(transport(format!("vector {i} has wrong dimension or non-finite values")));
        }
        out[i] = EmbeddingVector::normalized(v);
    }
    Ok(out)
}
