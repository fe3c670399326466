//! Question embeddings and cosine similarity.
//!
//! Two encoders sit behind one contract: an offline signed-hash bag of words
//! (the default) and a remote embeddings endpoint. Both produce L2-normalized
//! vectors, except that text with no tokens maps to the all-zero vector.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_DIMENSION: usize = 384;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("embedding endpoint transport error: {0}")]
    Transport(String),
    #[error("embedding endpoint returned an unusable response: {0}")]
    BadResponse(String),
}

/// A fixed-length vector that is either unit length or exactly zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitVector(Vec<f32>);

impl UnitVector {
    pub fn zeros(dimension: usize) -> Self {
        UnitVector(vec![0.0; dimension])
    }

    /// Normalizes `raw` to unit length; an all-zero input stays all-zero.
    pub fn normalize(raw: Vec<f64>) -> Self {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return UnitVector(vec![0.0; raw.len()]);
        }
        UnitVector(raw.into_iter().map(|v| (v / norm) as f32).collect())
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum EncoderMode {
    DeterministicHash,
    Remote { endpoint: String, model: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    #[serde(flatten)]
    pub mode: EncoderMode,
    pub dimension: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::hashed(DEFAULT_DIMENSION)
    }
}

impl EncoderConfig {
    pub fn hashed(dimension: usize) -> Self {
        EncoderConfig {
            mode: EncoderMode::DeterministicHash,
            dimension,
        }
    }

    pub fn remote(endpoint: impl Into<String>, model: impl Into<String>, dimension: usize) -> Self {
        EncoderConfig {
            mode: EncoderMode::Remote {
                endpoint: endpoint.into(),
                model: model.into(),
            },
            dimension,
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dimension == 0 {
            return Err(EmbedError::InvalidConfig("dimension must be positive".into()));
        }
        if let EncoderMode::Remote { endpoint, model } = &self.mode {
            if endpoint.is_empty() || model.is_empty() {
                return Err(EmbedError::InvalidConfig(
                    "remote mode needs an endpoint and a model".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Lowercased alphanumeric runs of `text`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Two independent 64-bit hashes of a token: the first and second
/// little-endian words of its SHA-256 digest.
pub fn token_hashes(token: &str) -> (u64, u64) {
    let digest = Sha256::digest(token.as_bytes());
    let h1 = u64::from_le_bytes(digest[0..8].try_into().expect("8 bytes"));
    let h2 = u64::from_le_bytes(digest[8..16].try_into().expect("8 bytes"));
    (h1, h2)
}

/// Signed feature hashing over lowercase tokens.
pub fn hash_embed(text: &str, dimension: usize) -> UnitVector {
    let mut acc = vec![0.0f64; dimension];
    for token in tokenize(text) {
        let (h1, h2) = token_hashes(&token);
        let bucket = (h1 % dimension as u64) as usize;
        acc[bucket] += if h2 % 2 == 0 { 1.0 } else { -1.0 };
    }
    UnitVector::normalize(acc)
}

/// Embeds text under one encoder configuration.
///
/// Remote mode keeps an HTTP agent so repeated calls reuse connections; the
/// agent is safe to share across threads.
#[derive(Clone)]
pub struct Embedder {
    config: EncoderConfig,
    agent: Option<ureq::Agent>,
    api_key: Option<String>,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder").field("config", &self.config).finish()
    }
}

impl Embedder {
    pub fn new(config: EncoderConfig) -> Result<Self, EmbedError> {
        config.validate()?;
        let agent = match config.mode {
            EncoderMode::DeterministicHash => None,
            EncoderMode::Remote { .. } => Some(
                ureq::Agent::config_builder()
                    .http_status_as_error(false)
                    .timeout_global(Some(Duration::from_secs(60)))
                    .build()
                    .into(),
            ),
        };
        let api_key = std::env::var("EMBEDDINGS_API_KEY")
            .or_else(|_| std::env::var("OPENAI_API_KEY"))
            .ok();
        Ok(Embedder {
            config,
            agent,
            api_key,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embed(&self, text: &str) -> Result<UnitVector, EmbedError> {
        match &self.config.mode {
            EncoderMode::DeterministicHash => Ok(hash_embed(text, self.config.dimension)),
            EncoderMode::Remote { endpoint, model } => self.embed_remote(endpoint, model, text),
        }
    }

    fn embed_remote(&self, endpoint: &str, model: &str, text: &str) -> Result<UnitVector, EmbedError> {
        if tokenize(text).next().is_none() {
            return Ok(UnitVector::zeros(self.config.dimension));
        }
        let agent = self.agent.as_ref().expect("remote mode has an agent");
        let mut req = agent.post(endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let body = serde_json::json!({ "model": model, "input": text });
        let mut resp = req
            .send_json(&body)
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let payload = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(EmbedError::Transport(format!("status {status}: {payload}")));
        }
        let raw = parse_embedding_response(&payload)?;
        if raw.len() != self.config.dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: self.config.dimension,
                actual: raw.len(),
            });
        }
        Ok(UnitVector::normalize(raw))
    }
}

/// Accepts `{"data":[{"embedding":[..]}]}` or a bare `{"embedding":[..]}`.
fn parse_embedding_response(payload: &str) -> Result<Vec<f64>, EmbedError> {
    let value: serde_json::Value =
        serde_json::from_str(payload).map_err(|e| EmbedError::BadResponse(e.to_string()))?;
    let vector = value
        .pointer("/data/0/embedding")
        .or_else(|| value.get("embedding"))
        .and_then(|v| v.as_array())
        .ok_or_else(|| EmbedError::BadResponse("no embedding array".into()))?;
    vector
        .iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| EmbedError::BadResponse("non-numeric component".into()))
        })
        .collect()
}

/// One-shot convenience over [`Embedder`].
pub fn embed(text: &str, config: &EncoderConfig) -> Result<UnitVector, EmbedError> {
    Embedder::new(config.clone())?.embed(text)
}

/// Dot product of two unit-or-zero vectors, accumulated in f64.
pub fn cosine_similarity(a: &UnitVector, b: &UnitVector) -> Result<f64, EmbedError> {
    if a.dimension() != b.dimension() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    let dot = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .fold(0.0f64, |acc, (x, y)| acc + f64::from(*x) * f64::from(*y));
    Ok(dot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic() {
        let cfg = EncoderConfig::default();
        let a = embed("list all singers", &cfg).unwrap();
        let b = embed("list all singers", &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dimension(), 384);
    }

    #[test]
    fn empty_text_is_zero() {
        let v = embed("", &EncoderConfig::default()).unwrap();
        assert!(v.is_zero());
        assert_eq!(v.dimension(), 384);
        assert!(embed("  ,;! ", &EncoderConfig::default()).unwrap().is_zero());
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            Embedder::new(EncoderConfig::hashed(0)),
            Err(EmbedError::InvalidConfig(_))
        ));
    }

    #[test]
    fn cosine_identity_and_zero() {
        let cfg = EncoderConfig::default();
        let v = embed("how many heads of departments are older than 56", &cfg).unwrap();
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-6);
        let z = UnitVector::zeros(384);
        assert_eq!(cosine_similarity(&v, &z).unwrap(), 0.0);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let a = UnitVector::zeros(3);
        let b = UnitVector::zeros(4);
        assert!(matches!(
            cosine_similarity(&a, &b),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn parses_openai_shape() {
        let v = parse_embedding_response(r#"{"data":[{"embedding":[0.5,1]}]}"#).unwrap();
        assert_eq!(v, vec![0.5, 1.0]);
        assert!(parse_embedding_response(r#"{"data":[]}"#).is_err());
    }

    proptest! {
        #[test]
        fn norm_is_unit_or_zero(text in "\\PC{0,60}") {
            let v = hash_embed(&text, 64);
            let n = v.norm();
            prop_assert!(n == 0.0 || (n - 1.0).abs() <= 1e-6, "norm {}", n);
            prop_assert_eq!(v, hash_embed(&text, 64));
        }

        #[test]
        fn cosine_symmetric_and_bounded(a in "[a-z ]{0,40}", b in "[a-z ]{0,40}") {
            let va = hash_embed(&a, 32);
            let vb = hash_embed(&b, 32);
            let ab = cosine_similarity(&va, &vb).unwrap();
            let ba = cosine_similarity(&vb, &va).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab.abs() <= 1.0 + 1e-9);
        }
    }
}
