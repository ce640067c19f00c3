//! Text embedding interface plus a deterministic offline embedder.

use super::GatewayError;
use crate::sha256_hex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
    /// sha256 of the embedded text.
    pub source_hash: String,
}

impl EmbeddingVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// An embedding backend. Must be pure: same text, same model_id, same vector.
pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;
}

/// Embed texts, one vector per input in input order.
pub fn embed(texts: &[String], embedder: &dyn Embedder) -> Result<Vec<EmbeddingVector>, GatewayError> {
    if texts.is_empty() {
        return Err(GatewayError::EmptyEmbeddingInput);
    }
    let values = embedder.embed_batch(texts)?;
    debug_assert_eq!(values.len(), texts.len());
    Ok(values
        .into_iter()
        .zip(texts)
        .map(|(values, text)| EmbeddingVector {
            values,
            model_id: embedder.model_id().to_string(),
            source_hash: sha256_hex(text.as_bytes()),
        })
        .collect())
}

/// Signed hashed bag-of-words in a small fixed dimension, L2-normalized.
///
/// Each lowercase alphanumeric token is hashed with SHA-256; the first eight
/// digest bytes (big-endian) pick a bucket, the ninth byte's parity picks the
/// sign. Deterministic and dependency-free — good enough to give related
/// texts related vectors, which is all the metric tests need. Real runs
/// point `model_id` at a sentence-transformer service instead.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dims: usize,
    model_id: String,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dims: 64, model_id: "hash-bow-64-v1".into() }
    }
}

impl HashEmbedder {
    pub fn with_dims(dims: usize) -> Self {
        assert!(dims > 0);
        HashEmbedder { dims, model_id: format!("hash-bow-{dims}-v1") }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.dims];
        for token in text
            .to_lowercase()
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let digest = Sha256::digest(token.as_bytes());
            let bucket =
                (u64::from_be_bytes(digest[0..8].try_into().unwrap()) % self.dims as u64) as usize;
            let sign = if digest[8] % 2 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut acc {
                *v /= norm;
            }
        }
        acc
    }
}

impl Embedder for HashEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        // order-stable: indexed collect, parallel only in execution
        Ok(texts.par_iter().map(|t| self.embed_one(t)).collect())
    }
}
