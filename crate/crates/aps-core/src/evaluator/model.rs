//! The trainable scorer: a two-layer feed-forward network mapping a
//! feature vector to one scalar. Parameters live in a single flat array
//! (w1 row-major, then b1, w2, b2) so checkpoints, gradients, and
//! optimizer state all share one layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use crate::error::{ApsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringModel {
    pub feature_dim: usize,
    pub hidden: usize,
    pub init_seed: u64,
    pub params: Vec<f64>,
}

pub const DEFAULT_HIDDEN: usize = 64;

impl ScoringModel {
    pub fn param_count(feature_dim: usize, hidden: usize) -> usize {
        hidden * feature_dim + hidden + hidden + 1
    }

    /// Fresh model with uniform init scaled by fan-in; biases zero.
    pub fn new(feature_dim: usize, hidden: usize, init_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut params = vec![0.0; Self::param_count(feature_dim, hidden)];
        let w1_scale = 1.0 / (feature_dim as f64).sqrt();
        for slot in params.iter_mut().take(hidden * feature_dim) {
            *slot = rng.gen_range(-w1_scale..w1_scale);
        }
        let w2_offset = hidden * feature_dim + hidden;
        let w2_scale = 1.0 / (hidden as f64).sqrt();
        for slot in params[w2_offset..w2_offset + hidden].iter_mut() {
            *slot = rng.gen_range(-w2_scale..w2_scale);
        }
        ScoringModel {
            feature_dim,
            hidden,
            init_seed,
            params,
        }
    }

    pub fn from_params(
        feature_dim: usize,
        hidden: usize,
        init_seed: u64,
        params: Vec<f64>,
    ) -> Result<Self> {
        let expected = Self::param_count(feature_dim, hidden);
        if params.len() != expected {
            return Err(ApsError::Shape(format!(
                "expected {expected} parameters for dims ({feature_dim}, {hidden}), got {}",
                params.len()
            )));
        }
        Ok(ScoringModel {
            feature_dim,
            hidden,
            init_seed,
            params,
        })
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.feature_dim;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden;
        (b1, w2, b2)
    }

    /// Forward pass returning the score and the tanh activations needed
    /// for backprop.
    pub(crate) fn forward(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (b1, w2, b2) = self.offsets();
        let mut h = Vec::with_capacity(self.hidden);
        for i in 0..self.hidden {
            let row = &self.params[i * self.feature_dim..(i + 1) * self.feature_dim];
            let mut z = self.params[b1 + i];
            for (w, xv) in row.iter().zip(x) {
                z += w * xv;
            }
            h.push(z.tanh());
        }
        let mut s = self.params[b2];
        for (w, hv) in self.params[w2..w2 + self.hidden].iter().zip(&h) {
            s += w * hv;
        }
        (s, h)
    }

    /// Pure scoring with a shape check.
    pub fn score(&self, features: &FeatureVector) -> Result<f64> {
        if features.values.len() != self.feature_dim {
            return Err(ApsError::Shape(format!(
                "feature dim {} does not match model dim {}",
                features.values.len(),
                self.feature_dim
            )));
        }
        Ok(self.forward(&features.values).0)
    }

    /// Accumulate d(score)/d(params) scaled by `factor` into `grad`,
    /// given the input and the activations from `forward`.
    pub(crate) fn accumulate_grad(&self, x: &[f64], h: &[f64], factor: f64, grad: &mut [f64]) {
        let (b1, w2, b2) = self.offsets();
        for i in 0..self.hidden {
            let w2_i = self.params[w2 + i];
            let dtanh = 1.0 - h[i] * h[i];
            let up = factor * w2_i * dtanh;
            let row = &mut grad[i * self.feature_dim..(i + 1) * self.feature_dim];
            for (g, xv) in row.iter_mut().zip(x) {
                *g += up * xv;
            }
            grad[b1 + i] += up;
            grad[w2 + i] += factor * h[i];
        }
        grad[b2] += factor;
    }
}
