//! Preference training: mini-batch AdamW over the pairwise loss.
//!
//! The run is deterministic for fixed (tuples, config, seed, provider):
//! per-epoch shuffles come from a counter-based PRNG, batches keep
//! shuffle order, and gradients accumulate in a fixed parameter layout.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureVector, Featurizer};
use super::loss::{preference_loss, LossMode};
use super::model::{ScoringModel, DEFAULT_HIDDEN};
use crate::domain::{
    Artifact, ArtifactHeader, ExampleIndex, PreferenceTuple, PromptDatabase,
};
use crate::error::{ApsError, Result};
use crate::hashing::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub loss_mode: LossMode,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.1,
            batch_size: 16,
            epochs: 30,
            learning_rate: 1e-3,
            epsilon: 0.1,
            loss_mode: LossMode::Logistic,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.beta1 && self.beta1 < 1.0 && 0.0 < self.beta2 && self.beta2 < 1.0) {
            return Err(ApsError::Config("betas must lie in (0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(ApsError::Config("weight_decay must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(ApsError::Config("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(ApsError::Config("epochs must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(ApsError::Config("learning_rate must be positive".into()));
        }
        if self.epsilon < 0.0 {
            return Err(ApsError::Config("epsilon must be nonnegative".into()));
        }
        if self.hidden == 0 {
            return Err(ApsError::Config("hidden width must be positive".into()));
        }
        Ok(())
    }

    /// Canonical string for fingerprinting.
    pub fn canonical(&self) -> String {
        format!(
            "b1={};b2={};wd={};bs={};ep={};lr={};eps={};mode={};h={}",
            self.beta1,
            self.beta2,
            self.weight_decay,
            self.batch_size,
            self.epochs,
            self.learning_rate,
            self.epsilon,
            self.loss_mode,
            self.hidden
        )
    }
}

/// Trained scorer plus everything needed to reuse it faithfully.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub recipe_id: String,
    pub model: ScoringModel,
    pub train_config: TrainConfig,
    pub loss_curve: Vec<f64>,
    pub fingerprint: String,
    pub parent_fingerprint: Option<String>,
}

/// Features for both sides of every tuple; distinct (example, prompt)
/// pairs are computed once and shared.
pub struct PairFeatures {
    pub pairs: Vec<(Arc<FeatureVector>, Arc<FeatureVector>)>,
}

pub fn featurize_tuples(
    tuples: &[PreferenceTuple],
    featurizer: &Featurizer,
    examples: &ExampleIndex,
    db: &PromptDatabase,
) -> Result<PairFeatures> {
    let mut memo: HashMap<(String, String), Arc<FeatureVector>> = HashMap::new();
    let mut pairs = Vec::with_capacity(tuples.len());
    for tuple in tuples {
        let example = examples.get(&tuple.example_id).ok_or_else(|| {
            ApsError::Train(format!("tuple references unknown example {}", tuple.example_id))
        })?;
        let mut feature_for = |prompt_id: &str| -> Result<Arc<FeatureVector>> {
            let key = (tuple.example_id.clone(), prompt_id.to_string());
            if let Some(hit) = memo.get(&key) {
                return Ok(Arc::clone(hit));
            }
            let prompt = db.get(prompt_id).ok_or_else(|| {
                ApsError::Train(format!("tuple references unknown prompt {prompt_id}"))
            })?;
            let fv = Arc::new(featurizer.featurize(example, prompt)?);
            memo.insert(key, Arc::clone(&fv));
            Ok(fv)
        };
        let good = feature_for(&tuple.good_prompt_id)?;
        let bad = feature_for(&tuple.bad_prompt_id)?;
        pairs.push((good, bad));
    }
    Ok(PairFeatures { pairs })
}

/// Mean loss over a batch of (good, bad) feature pairs and its exact
/// gradient w.r.t. the flat parameter vector.
pub fn batch_loss_and_grad(
    model: &ScoringModel,
    pairs: &[(&FeatureVector, &FeatureVector)],
    epsilon: f64,
    mode: LossMode,
) -> Result<(f64, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(ApsError::Precondition("empty batch".into()));
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut grad = vec![0.0; model.params.len()];
    let mut total = 0.0;
    for (good, bad) in pairs {
        if good.values.len() != model.feature_dim || bad.values.len() != model.feature_dim {
            return Err(ApsError::Shape(format!(
                "feature dims ({}, {}) do not match model dim {}",
                good.values.len(),
                bad.values.len(),
                model.feature_dim
            )));
        }
        let (s_good, h_good) = model.forward(&good.values);
        let (s_bad, h_bad) = model.forward(&bad.values);
        let lg = preference_loss(s_good, s_bad, epsilon, mode);
        total += lg.loss;
        model.accumulate_grad(&good.values, &h_good, lg.d_good * scale, &mut grad);
        model.accumulate_grad(&bad.values, &h_bad, lg.d_bad * scale, &mut grad);
    }
    Ok((total * scale, grad))
}

/// Train the scorer on preference tuples.
#[allow(clippy::too_many_arguments)]
pub fn train(
    tuples: &[PreferenceTuple],
    featurizer: &Featurizer,
    examples: &ExampleIndex,
    db: &PromptDatabase,
    config: &TrainConfig,
    seed: u64,
    fingerprint: String,
    parent_fingerprint: Option<String>,
) -> Result<Checkpoint> {
    config.validate()?;
    if tuples.is_empty() {
        return Err(ApsError::Train(
            "no preference tuples to train on; every synthesized partition was degenerate \
             (inspect the synthesis logs)"
                .into(),
        ));
    }
    let features = featurize_tuples(tuples, featurizer, examples, db)?;
    let dim = featurizer.feature_dim();

    let mut model = ScoringModel::new(dim, config.hidden, derive_seed(seed, "scorer-init", 0));
    let n_params = model.params.len();
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut step = 0u32;
    let mut loss_curve = Vec::with_capacity(config.epochs);

    let mut order: Vec<usize> = (0..tuples.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "epoch-shuffle", epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let pairs: Vec<(&FeatureVector, &FeatureVector)> = batch
                .iter()
                .map(|&idx| {
                    let (good, bad) = &features.pairs[idx];
                    (good.as_ref(), bad.as_ref())
                })
                .collect();
            let (mean_loss, grad) =
                batch_loss_and_grad(&model, &pairs, config.epsilon, config.loss_mode)?;
            epoch_loss += mean_loss * batch.len() as f64;

            step += 1;
            let bias1 = 1.0 - config.beta1.powi(step as i32);
            let bias2 = 1.0 - config.beta2.powi(step as i32);
            for i in 0..n_params {
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                model.params[i] -= config.learning_rate
                    * (m_hat / (v_hat.sqrt() + 1e-8) + config.weight_decay * model.params[i]);
            }
        }
        loss_curve.push(epoch_loss / tuples.len() as f64);
    }

    Ok(Checkpoint {
        recipe_id: featurizer.recipe_id(),
        model,
        train_config: config.clone(),
        loss_curve,
        fingerprint,
        parent_fingerprint,
    })
}

/// Fraction of tuples the model orders correctly; ties count one half.
pub fn pairwise_accuracy(
    model: &ScoringModel,
    tuples: &[PreferenceTuple],
    featurizer: &Featurizer,
    examples: &ExampleIndex,
    db: &PromptDatabase,
) -> Result<f64> {
    if tuples.is_empty() {
        return Err(ApsError::Precondition(
            "pairwise accuracy needs at least one tuple".into(),
        ));
    }
    let features = featurize_tuples(tuples, featurizer, examples, db)?;
    let mut score_sum = 0.0;
    for (good, bad) in &features.pairs {
        let s_good = model.score(good.as_ref())?;
        let s_bad = model.score(bad.as_ref())?;
        score_sum += if s_good > s_bad {
            1.0
        } else if s_good == s_bad {
            0.5
        } else {
            0.0
        };
    }
    Ok(score_sum / tuples.len() as f64)
}

// --- checkpoint artifact ----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    recipe_id: String,
    feature_dim: usize,
    hidden: usize,
    init_seed: u64,
    train_config: TrainConfig,
    loss_curve: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsRecord {
    params: Vec<f64>,
}

impl Artifact for Checkpoint {
    const KIND: &'static str = "evaluator-checkpoint";
    const VERSION: u32 = 1;

    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn parent(&self) -> Option<&str> {
        self.parent_fingerprint.as_deref()
    }

    fn record_lines(&self) -> Result<Vec<String>> {
        use crate::domain::artifact::to_record;
        Ok(vec![
            to_record(&CheckpointMeta {
                recipe_id: self.recipe_id.clone(),
                feature_dim: self.model.feature_dim,
                hidden: self.model.hidden,
                init_seed: self.model.init_seed,
                train_config: self.train_config.clone(),
                loss_curve: self.loss_curve.clone(),
            })?,
            to_record(&ParamsRecord {
                params: self.model.params.clone(),
            })?,
        ])
    }

    fn from_parts(header: &ArtifactHeader, records: &[&str]) -> Result<Self> {
        use crate::domain::artifact::parse_record;
        if records.len() != 2 {
            return Err(ApsError::StaleArtifact(
                "checkpoint must hold exactly two records".into(),
            ));
        }
        let meta: CheckpointMeta = parse_record(records[0], "checkpoint meta")?;
        let params: ParamsRecord = parse_record(records[1], "checkpoint params")?;
        let model = ScoringModel::from_params(
            meta.feature_dim,
            meta.hidden,
            meta.init_seed,
            params.params,
        )
        .map_err(|e| ApsError::StaleArtifact(e.to_string()))?;
        Ok(Checkpoint {
            recipe_id: meta.recipe_id,
            model,
            train_config: meta.train_config,
            loss_curve: meta.loss_curve,
            fingerprint: header.fingerprint.clone(),
            parent_fingerprint: header.parent.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AnswerType, Prompt, QAExample, Split};
    use crate::embed::MockEmbedder;

    fn setup() -> (Vec<QAExample>, PromptDatabase) {
        let examples = vec![QAExample::new(
            "e0",
            "how many total?",
            "",
            "",
            "5",
            AnswerType::FreeFormNumeric,
            Split::Train,
        )
        .unwrap()];
        let db = PromptDatabase {
            prompts: vec![
                Prompt {
                    id: "p000".into(),
                    text: "add the numbers carefully".into(),
                    origin_cluster: Some(0),
                },
                Prompt {
                    id: "p001".into(),
                    text: "write a poem instead".into(),
                    origin_cluster: Some(0),
                },
            ],
            config_fingerprint: "fp".into(),
            parent_fingerprint: None,
        };
        (examples, db)
    }

    fn one_tuple() -> Vec<PreferenceTuple> {
        vec![PreferenceTuple {
            example_id: "e0".into(),
            good_prompt_id: "p000".into(),
            bad_prompt_id: "p001".into(),
            good_fitness: 1.0,
            bad_fitness: 0.0,
            lambda: 0.5,
        }]
    }

    #[test]
    fn single_pair_separates_below_ln_two() {
        let (examples, db) = setup();
        let provider = MockEmbedder::new(8, 0);
        let featurizer = Featurizer::new(&provider);
        let index = ExampleIndex::new(&examples);
        let config = TrainConfig {
            epochs: 30,
            epsilon: 0.0,
            hidden: 8,
            ..TrainConfig::default()
        };
        let ckpt = train(
            &one_tuple(),
            &featurizer,
            &index,
            &db,
            &config,
            7,
            "fp".into(),
            None,
        )
        .unwrap();
        let final_loss = *ckpt.loss_curve.last().unwrap();
        assert!(
            final_loss < std::f64::consts::LN_2,
            "final loss {final_loss} did not drop below ln 2"
        );
        assert_eq!(ckpt.loss_curve.len(), 30);
    }

    #[test]
    fn empty_tuples_point_at_synthesis_logs() {
        let (examples, db) = setup();
        let provider = MockEmbedder::new(8, 0);
        let featurizer = Featurizer::new(&provider);
        let index = ExampleIndex::new(&examples);
        let err = train(
            &[],
            &featurizer,
            &index,
            &db,
            &TrainConfig::default(),
            7,
            "fp".into(),
            None,
        )
        .unwrap_err();
        match err {
            ApsError::Train(message) => assert!(message.contains("synthesis")),
            other => panic!("expected train error, got {other:?}"),
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (examples, db) = setup();
        let provider = MockEmbedder::new(8, 0);
        let featurizer = Featurizer::new(&provider);
        let index = ExampleIndex::new(&examples);
        let config = TrainConfig {
            epochs: 5,
            hidden: 8,
            ..TrainConfig::default()
        };
        let run = || {
            train(
                &one_tuple(),
                &featurizer,
                &index,
                &db,
                &config,
                99,
                "fp".into(),
                None,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert_eq!(a.record_lines().unwrap(), b.record_lines().unwrap());
    }

    #[test]
    fn defaults_match_published_optimizer_settings() {
        let config = TrainConfig::default();
        assert_eq!(config.beta1, 0.9);
        assert_eq!(config.beta2, 0.95);
        assert_eq!(config.weight_decay, 0.1);
        assert_eq!(config.batch_size, 16);
        assert_eq!(config.epochs, 30);
    }

    #[test]
    fn random_init_sits_at_chance_on_symmetric_data() {
        // Every ordered pair appears in both directions, so any model
        // that never ties scores exactly one of the two correctly.
        let examples = vec![QAExample::new(
            "e0",
            "how many total?",
            "",
            "",
            "5",
            AnswerType::FreeFormNumeric,
            Split::Train,
        )
        .unwrap()];
        let db = PromptDatabase {
            prompts: (0..40)
                .map(|i| Prompt {
                    id: format!("p{i:03}"),
                    text: format!("distinct wording number {i} variant {}", i * 3 + 1),
                    origin_cluster: Some(0),
                })
                .collect(),
            config_fingerprint: "fp".into(),
            parent_fingerprint: None,
        };
        let mut tuples = Vec::new();
        for i in 0..db.len() {
            for j in 0..db.len() {
                if i != j {
                    tuples.push(PreferenceTuple {
                        example_id: "e0".into(),
                        good_prompt_id: format!("p{i:03}"),
                        bad_prompt_id: format!("p{j:03}"),
                        good_fitness: 1.0,
                        bad_fitness: 0.0,
                        lambda: 0.5,
                    });
                }
            }
        }
        assert!(tuples.len() >= 1000);

        let provider = MockEmbedder::new(8, 0);
        let featurizer = Featurizer::new(&provider);
        let index = ExampleIndex::new(&examples);
        let model = crate::evaluator::ScoringModel::new(featurizer.feature_dim(), 16, 5);
        let acc = pairwise_accuracy(&model, &tuples, &featurizer, &index, &db).unwrap();
        assert!((acc - 0.5).abs() <= 0.1, "chance-level accuracy was {acc}");
    }

    #[test]
    fn perfect_separator_scores_one() {
        let (examples, db) = setup();
        let provider = MockEmbedder::new(8, 0);
        let featurizer = Featurizer::new(&provider);
        let index = ExampleIndex::new(&examples);
        let config = TrainConfig {
            epochs: 40,
            hidden: 8,
            ..TrainConfig::default()
        };
        let ckpt = train(
            &one_tuple(),
            &featurizer,
            &index,
            &db,
            &config,
            7,
            "fp".into(),
            None,
        )
        .unwrap();
        let acc = pairwise_accuracy(&ckpt.model, &one_tuple(), &featurizer, &index, &db).unwrap();
        assert_eq!(acc, 1.0);
    }
}
