//! Deterministic text embeddings by signed feature hashing of character
//! n-grams, plus the wire contract for an optional external embedding service.
//!
//! The hash is FNV-1a (64-bit) over the n-gram's UTF-8 bytes, starting from
//! the FNV offset basis XORed with [`HASH_SEED`], followed by the SplitMix64
//! finalizer. The bucket is `h % dim`; the sign is the top bit of `h`. These
//! constants are part of the snapshot format: changing them changes every
//! vector and invalidates replay.

use serde::{Deserialize, Serialize};

pub const HASH_SEED: u64 = 0x5354_4f52_5944_534b;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("text produced no features (shorter than the n-gram width or fully cancelled)")]
    AllZero,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid embed config: {0}")]
    InvalidConfig(&'static str),
    #[error("embedding service: {0}")]
    Remote(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub dim: usize,
    pub ngram: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { dim: 256, ngram: 3 }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim < 8 {
            return Err(EmbedError::InvalidConfig("dim must be at least 8"));
        }
        if self.ngram < 1 {
            return Err(EmbedError::InvalidConfig("ngram must be at least 1"));
        }
        Ok(())
    }
}

/// A dense embedding. Article embeddings are unit-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f32>);

impl Vector {
    pub fn new(dims: Vec<f32>) -> Self {
        Self(dims)
    }

    /// L2-normalizes `dims`; `None` for the zero vector.
    pub fn normalized(dims: &[f64]) -> Option<Self> {
        let norm = dims.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        Some(Self(dims.iter().map(|x| (x / norm) as f32).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    /// 64-bit fingerprint of the exact bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h = FNV_OFFSET;
        for x in &self.0 {
            for b in x.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(FNV_PRIME);
            }
        }
        splitmix64(h)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded FNV-1a with a SplitMix64 finalizer.
pub fn ngram_hash(gram: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ HASH_SEED;
    for &b in gram {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

/// Embeds already-normalized text.
pub fn hash_embed(text: &str, cfg: &EmbedConfig) -> Result<Vector, EmbedError> {
    cfg.validate()?;
    if text.is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let mut bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    bounds.push(text.len());
    let n_chars = bounds.len() - 1;
    if n_chars < cfg.ngram {
        return Err(EmbedError::AllZero);
    }

    let mut counts = vec![0i64; cfg.dim];
    for start in 0..=(n_chars - cfg.ngram) {
        let gram = &text.as_bytes()[bounds[start]..bounds[start + cfg.ngram]];
        let h = ngram_hash(gram);
        let bucket = (h % cfg.dim as u64) as usize;
        if h >> 63 == 0 {
            counts[bucket] += 1;
        } else {
            counts[bucket] -= 1;
        }
    }
    let dims: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    Vector::normalized(&dims).ok_or(EmbedError::AllZero)
}

/// Cosine of two unit vectors, clamped to [-1, 1].
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(dot(a.as_slice(), b.as_slice()).clamp(-1.0, 1.0))
}

/// Dot product in f64. Eight running lanes combined in a fixed order keep
/// the result bit-reproducible while letting the loop vectorize.
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += f64::from(x[i]) * f64::from(y[i]);
        }
    }
    let mut tail = 0.0;
    for (&x, &y) in ra.iter().zip(rb) {
        tail += f64::from(x) * f64::from(y);
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

/// Source of article embeddings.
pub trait Embedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vector>, EmbedError>;

    /// True when vectors can be recomputed at replay time from text alone.
    /// The desk then embeds with the hash embedder under its own stored
    /// configuration. Non-reproducible embedders have their vectors recorded
    /// in the log.
    fn reproducible(&self) -> bool;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HashEmbedder {
    pub cfg: EmbedConfig,
}

impl Embedder for HashEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vector>, EmbedError> {
        texts.iter().map(|t| hash_embed(t, &self.cfg)).collect()
    }

    fn reproducible(&self) -> bool {
        true
    }
}

/// Request body for the external embedding service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
    pub dim: usize,
}

/// Response body from the external embedding service, vectors in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f32>>,
}

/// Checks arity and dimension of a service response and re-normalizes.
pub fn accept_response(
    response: EmbedResponse,
    expected: usize,
    dim: usize,
) -> Result<Vec<Vector>, EmbedError> {
    if response.vectors.len() != expected {
        return Err(EmbedError::Remote(format!(
            "expected {expected} vectors, got {}",
            response.vectors.len()
        )));
    }
    response
        .vectors
        .into_iter()
        .map(|v| {
            if v.len() != dim {
                return Err(EmbedError::DimensionMismatch {
                    left: v.len(),
                    right: dim,
                });
            }
            let wide: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
            Vector::normalized(&wide).ok_or(EmbedError::AllZero)
        })
        .collect()
}

/// Client for an external embedding service speaking the
/// [`EmbedRequest`]/[`EmbedResponse`] JSON contract over HTTP POST.
#[cfg(feature = "remote-embedder")]
pub struct RemoteEmbedder {
    pub url: String,
    pub dim: usize,
    agent: ureq::Agent,
}

#[cfg(feature = "remote-embedder")]
impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, dim: usize) -> Self {
        Self {
            url: url.into(),
            dim,
            agent: ureq::Agent::new(),
        }
    }
}

#[cfg(feature = "remote-embedder")]
impl Embedder for RemoteEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vector>, EmbedError> {
        let request = EmbedRequest {
            texts: texts.iter().map(|t| t.to_string()).collect(),
            dim: self.dim,
        };
        let response: EmbedResponse = self
            .agent
            .post(&self.url)
            .send_json(&request)
            .map_err(|e| EmbedError::Remote(e.to_string()))?
            .into_json()
            .map_err(|e| EmbedError::Remote(e.to_string()))?;
        accept_response(response, texts.len(), self.dim)
    }

    fn reproducible(&self) -> bool {
        false
    }
}
