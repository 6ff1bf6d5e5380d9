//! Embedding providers behind one interface: a deterministic hash-based
//! mock for offline runs and tests, and a client for OpenAI-compatible
//! embeddings endpoints. A shared cache wrapper lets several pipeline
//! runs over the same corpus reuse vectors.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{ApsError, Result};
use crate::hashing::{fnv1a64, splitmix64, unit_f64};

/// A fixed-length embedding. All entries finite; dimension constant
/// across a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ApsError::Provider(
                "embedding contains a non-finite entry".into(),
            ));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier; participates in fingerprints and the
    /// checkpoint feature recipe.
    fn id(&self) -> String;

    fn dim(&self) -> usize;

    /// One vector per text, order preserved, all dims equal.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;
}

impl EmbeddingProvider for Box<dyn EmbeddingProvider> {
    fn id(&self) -> String {
        self.as_ref().id()
    }

    fn dim(&self) -> usize {
        self.as_ref().dim()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        self.as_ref().embed(texts)
    }
}

fn check_batch(vectors: &[EmbeddingVector], expected_dim: usize) -> Result<()> {
    for v in vectors {
        if v.dim() != expected_dim {
            return Err(ApsError::Provider(format!(
                "dimension mismatch in batch: expected {}, found {}",
                expected_dim,
                v.dim()
            )));
        }
    }
    Ok(())
}

/// Deterministic mock: each token maps to a fixed pseudo-random unit
/// vector from its hash, and a text embeds as the mean of its token
/// vectors. Identical text always yields the identical vector.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        MockEmbedder { dim, seed }
    }

    fn token_entry(&self, token_hash: u64, entry: usize) -> f64 {
        unit_f64(splitmix64(
            token_hash ^ splitmix64(self.seed ^ (entry as u64).wrapping_mul(0x9e37_79b9)),
        ))
    }

    fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; self.dim];
        let mut count = 0usize;
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let h = fnv1a64(&token.to_lowercase());
            for (e, slot) in values.iter_mut().enumerate() {
                *slot += self.token_entry(h, e);
            }
            count += 1;
        }
        if count > 0 {
            let n = count as f64;
            for v in &mut values {
                *v /= n;
            }
        }
        EmbeddingVector { values }
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        MockEmbedder::new(32, 0)
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn id(&self) -> String {
        format!("mock/{}/{}", self.dim, self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(ApsError::Precondition("embed requires at least one text".into()));
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Configuration for a remote embeddings endpoint (OpenAI-compatible).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbedderConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

#[derive(Serialize)]
struct EmbeddingsRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingsDatum>,
}

#[derive(Deserialize)]
struct EmbeddingsDatum {
    index: usize,
    embedding: Vec<f64>,
}

/// Client for the `/v1/embeddings` wire format.
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    dim: Mutex<Option<usize>>,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .map_err(|e| ApsError::Provider(format!("http client construction failed: {e}")))?;
        Ok(RemoteEmbedder {
            config,
            dim: Mutex::new(None),
            client,
        })
    }

    fn endpoint(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        if base.ends_with("/v1") {
            format!("{base}/embeddings")
        } else {
            format!("{base}/v1/embeddings")
        }
    }

    fn request_once(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let body = EmbeddingsRequest {
            model: &self.config.model,
            input: texts,
        };
        let mut req = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| ApsError::Provider(format!("embeddings request failed: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| ApsError::Provider(format!("embeddings body read failed: {e}")))?;
        if !status.is_success() {
            return Err(ApsError::Provider(format!(
                "embeddings endpoint returned {status}: {text}"
            )));
        }
        let parsed: EmbeddingsResponse = serde_json::from_str(&text)
            .map_err(|e| ApsError::Protocol(format!("embeddings response malformed: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(ApsError::Provider(format!(
                "embeddings count mismatch: sent {}, received {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut ordered = parsed.data;
        ordered.sort_by_key(|d| d.index);
        ordered
            .into_iter()
            .map(|d| EmbeddingVector::new(d.embedding))
            .collect()
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote/{}", self.config.model)
    }

    fn dim(&self) -> usize {
        self.dim.lock().unwrap().unwrap_or(0)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(ApsError::Precondition("embed requires at least one text".into()));
        }
        let mut last_err = None;
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(std::time::Duration::from_millis(
                    self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(8)),
                ));
            }
            match self.request_once(texts) {
                Ok(vectors) => {
                    let mut dim_guard = self.dim.lock().unwrap();
                    let expected = dim_guard.unwrap_or_else(|| {
                        vectors.first().map(|v| v.dim()).unwrap_or(0)
                    });
                    check_batch(&vectors, expected)?;
                    *dim_guard = Some(expected);
                    return Ok(vectors);
                }
                // Protocol and contract violations are not transient.
                Err(e @ ApsError::Protocol(_)) => return Err(e),
                Err(e) => last_err = Some(e),
            }
        }
        Err(ApsError::Provider(format!(
            "embeddings stage exhausted {} attempt(s): {}",
            self.config.max_retries + 1,
            last_err.map(|e| e.to_string()).unwrap_or_default()
        )))
    }
}

/// Wrapper that memoizes per-text vectors in a shareable cache. The
/// cache key includes the provider id so mixed chains cannot alias.
pub struct CachedEmbedder<P> {
    inner: P,
    cache: Arc<Mutex<HashMap<String, EmbeddingVector>>>,
}

pub type SharedEmbeddingCache = Arc<Mutex<HashMap<String, EmbeddingVector>>>;

impl<P: EmbeddingProvider> CachedEmbedder<P> {
    pub fn new(inner: P, cache: SharedEmbeddingCache) -> Self {
        CachedEmbedder { inner, cache }
    }

    fn key(&self, text: &str) -> String {
        format!("{}|{}", self.inner.id(), text)
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedEmbedder<P> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(ApsError::Precondition("embed requires at least one text".into()));
        }
        let mut out: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        let mut missing: Vec<usize> = Vec::new();
        {
            let cache = self.cache.lock().unwrap();
            for (i, text) in texts.iter().enumerate() {
                match cache.get(&self.key(text)) {
                    Some(v) => out[i] = Some(v.clone()),
                    None => missing.push(i),
                }
            }
        }
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let fresh = self.inner.embed(&batch)?;
            let mut cache = self.cache.lock().unwrap();
            for (&i, v) in missing.iter().zip(fresh) {
                cache.insert(self.key(&texts[i]), v.clone());
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.unwrap()).collect())
    }
}

/// Embed a text list in fixed-size batches, preserving order.
pub fn embed_all(
    provider: &dyn EmbeddingProvider,
    texts: &[String],
    batch_size: usize,
) -> Result<Vec<EmbeddingVector>> {
    if texts.is_empty() {
        return Err(ApsError::Precondition("embed requires at least one text".into()));
    }
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(batch_size.max(1)) {
        out.extend(provider.embed(chunk)?);
    }
    let dim = out[0].dim();
    check_batch(&out, dim)?;
    Ok(out)
}
