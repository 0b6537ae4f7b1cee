//! Mention and entity embeddings.
//!
//! [`Embedder`] is the contract the retrieval and datastore layers consume:
//! texts in, one unit-norm [`EmbeddingVector`] per text out, order preserved.
//! Two backends implement it: the built-in trainable [`NGramEncoder`] and a
//! [`RemoteEmbedder`] speaking the model shim's `/embed` protocol.

pub mod loss;
pub mod ngram;
pub mod train;
mod vector;

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::remote::{HttpJsonClient, RemoteConfig, RemoteError};

pub use loss::{contrastive_loss, loss_from_scores};
pub use ngram::{NGramConfig, NGramEncoder};
pub use train::{train, ContrastiveConfig, NegativeMiner, NoMiner, TrainError, TrainOutcome};
pub use vector::{score, EmbeddingVector};

#[derive(Debug, Clone, Error)]
pub enum EmbedError {
    #[error("text #{0} is empty")]
    EmptyText(usize),
    #[error("no texts to embed")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("contrastive loss needs at least one negative")]
    NoNegatives,
    #[error("embedding is zero or non-finite")]
    Degenerate,
    #[error("remote embedder unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("malformed remote embedding response: {0}")]
    MalformedRemoteResponse(String),
}

impl From<RemoteError> for EmbedError {
    fn from(e: RemoteError) -> Self {
        match e {
            RemoteError::Unavailable(m) => EmbedError::RemoteUnavailable(m),
            RemoteError::Malformed(m) => EmbedError::MalformedRemoteResponse(m),
        }
    }
}

pub trait Embedder: Sync {
    /// Output dimension, when known before the first call.
    fn dimension(&self) -> Option<usize>;

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    /// Identifies the weights behind the vectors; persisted next to anything
    /// built from them so a stale index or datastore is detectable.
    fn fingerprint(&self) -> String;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed(&[text])?.pop().expect("one vector per text"))
    }
}

fn check_texts(texts: &[&str]) -> Result<(), EmbedError> {
    if texts.is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbedError::EmptyText(i));
    }
    Ok(())
}

impl Embedder for NGramEncoder {
    fn dimension(&self) -> Option<usize> {
        Some(NGramEncoder::dimension(self))
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_texts(texts)?;
        texts.par_iter().map(|t| self.encode(t)).collect()
    }

    fn fingerprint(&self) -> String {
        NGramEncoder::fingerprint(self)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for a remote `/embed` endpoint. Received vectors are
/// re-normalized; the first response fixes the session dimension.
#[derive(Debug)]
pub struct RemoteEmbedder {
    client: HttpJsonClient,
    batch_size: usize,
    dimension: OnceLock<usize>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteConfig) -> RemoteEmbedder {
        RemoteEmbedder {
            client: HttpJsonClient::new(config),
            batch_size: 64,
            dimension: OnceLock::new(),
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> RemoteEmbedder {
        self.batch_size = batch_size.max(1);
        self
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> Option<usize> {
        self.dimension.get().copied()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_texts(texts)?;
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let resp: EmbedResponse = self.client.post("embed", &EmbedRequest { texts: chunk })?;
            if resp.vectors.len() != chunk.len() {
                return Err(EmbedError::MalformedRemoteResponse(format!(
                    "{} vectors for {} texts",
                    resp.vectors.len(),
                    chunk.len()
                )));
            }
            for raw in resp.vectors {
                let expected = *self.dimension.get_or_init(|| raw.len());
                if raw.len() != expected {
                    return Err(EmbedError::DimensionMismatch {
                        expected,
                        found: raw.len(),
                    });
                }
                let v = EmbeddingVector::normalized(raw)
                    .map_err(|_| EmbedError::MalformedRemoteResponse("zero or non-finite vector".into()))?;
                out.push(v);
            }
        }
        Ok(out)
    }

    fn fingerprint(&self) -> String {
        format!("remote:{}", self.client.endpoint("embed"))
    }
}

/// Embedding backend selected at configuration time.
#[derive(Debug)]
pub enum EmbedderBackend {
    Builtin(NGramEncoder),
    Remote(RemoteEmbedder),
}

impl Embedder for EmbedderBackend {
    fn dimension(&self) -> Option<usize> {
        match self {
            EmbedderBackend::Builtin(e) => Embedder::dimension(e),
            EmbedderBackend::Remote(e) => e.dimension(),
        }
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        match self {
            EmbedderBackend::Builtin(e) => e.embed(texts),
            EmbedderBackend::Remote(e) => e.embed(texts),
        }
    }

    fn fingerprint(&self) -> String {
        match self {
            EmbedderBackend::Builtin(e) => Embedder::fingerprint(e),
            EmbedderBackend::Remote(e) => e.fingerprint(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encoder() -> NGramEncoder {
        let cfg = NGramConfig {
            dimension: 8,
            hash_buckets: 8,
            ..NGramConfig::default()
        };
        NGramEncoder::new(cfg, ["abc"])
    }

    #[test]
    fn embed_preserves_order_and_duplicates() {
        let enc = encoder();
        let out = enc.embed(&["abc", "xyz", "abc"]).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], out[2]);
        assert_ne!(out[0], out[1]);
        assert_eq!(enc.embed(&["abc"]).unwrap()[0], out[0]);
    }

    #[test]
    fn embed_rejects_empty_inputs() {
        let enc = encoder();
        assert!(matches!(enc.embed(&[]), Err(EmbedError::EmptyInput)));
        assert!(matches!(enc.embed(&["ok", ""]), Err(EmbedError::EmptyText(1))));
    }

    #[test]
    fn unreachable_remote_reports_unavailable() {
        let mut cfg = RemoteConfig::new("http://127.0.0.1:9");
        cfg.retries = 0;
        cfg.timeout = std::time::Duration::from_millis(500);
        let remote = RemoteEmbedder::new(cfg);
        assert!(matches!(remote.embed(&["abc"]), Err(EmbedError::RemoteUnavailable(_))));
    }
}
