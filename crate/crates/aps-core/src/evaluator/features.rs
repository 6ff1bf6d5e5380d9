//! Featurization of (question, context, prompt) triples.
//!
//! The scorer sees frozen provider embeddings rather than raw text: the
//! feature vector concatenates the input embedding, the prompt
//! embedding, their elementwise product, and their elementwise absolute
//! difference. Embeddings are memoized by text so repeated
//! featurization issues no repeated provider calls.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::domain::{Prompt, QAExample};
use crate::embed::EmbeddingProvider;
use crate::error::{ApsError, Result};

/// Version tag of the feature assembly rule; changing the rule must
/// change this string so stale checkpoints are refused.
pub const FEATURE_RECIPE: &str = "qc-p-prod-absdiff-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

/// The question-plus-context text whose embedding feeds the scorer.
pub fn qc_text(example: &QAExample) -> String {
    if example.context.is_empty() {
        example.question.clone()
    } else {
        format!("{} {}", example.question, example.context)
    }
}

pub struct Featurizer<'p> {
    provider: &'p dyn EmbeddingProvider,
    cache: Mutex<HashMap<String, Vec<f64>>>,
    provider_calls: AtomicU64,
}

impl<'p> Featurizer<'p> {
    pub fn new(provider: &'p dyn EmbeddingProvider) -> Self {
        Featurizer {
            provider,
            cache: Mutex::new(HashMap::new()),
            provider_calls: AtomicU64::new(0),
        }
    }

    /// Identifier binding the feature rule to the embedding provider;
    /// recorded in checkpoints and checked at ranking time.
    pub fn recipe_id(&self) -> String {
        format!("{FEATURE_RECIPE}|{}", self.provider.id())
    }

    pub fn feature_dim(&self) -> usize {
        4 * self.provider.dim()
    }

    /// Number of provider round-trips so far (cache misses only).
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::Relaxed)
    }

    fn embedding_of(&self, text: &str) -> Result<Vec<f64>> {
        if let Some(hit) = self.cache.lock().unwrap().get(text) {
            return Ok(hit.clone());
        }
        let fresh = self.provider.embed(&[text.to_string()])?;
        self.provider_calls.fetch_add(1, Ordering::Relaxed);
        let values = fresh
            .into_iter()
            .next()
            .ok_or_else(|| ApsError::Provider("provider returned no vector".into()))?
            .values;
        self.cache
            .lock()
            .unwrap()
            .insert(text.to_string(), values.clone());
        Ok(values)
    }

    pub fn featurize(&self, example: &QAExample, prompt: &Prompt) -> Result<FeatureVector> {
        let e_qc = self.embedding_of(&qc_text(example))?;
        let e_p = self.embedding_of(&prompt.text)?;
        if e_qc.len() != e_p.len() {
            return Err(ApsError::Provider(format!(
                "embedding dims differ: input {} vs prompt {}",
                e_qc.len(),
                e_p.len()
            )));
        }
        let dim = e_qc.len();
        let mut values = Vec::with_capacity(4 * dim);
        values.extend_from_slice(&e_qc);
        values.extend_from_slice(&e_p);
        for i in 0..dim {
            values.push(e_qc[i] * e_p[i]);
        }
        for i in 0..dim {
            values.push((e_qc[i] - e_p[i]).abs());
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ApsError::Provider("non-finite feature entry".into()));
        }
        Ok(FeatureVector { values })
    }
}
