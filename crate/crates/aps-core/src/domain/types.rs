//! Shared domain types for the whole pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{ApsError, Result};
use crate::evaluator::LossMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    FreeFormNumeric,
    MultipleChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One question/context/answer record.
///
/// `context` holds the option list for multiple-choice items and is
/// otherwise free text (possibly empty). `rationale` is only populated
/// for corpora that ship one; it feeds clustering, never scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub context: String,
    #[serde(default)]
    pub rationale: String,
    pub gold_answer: String,
    pub answer_type: AnswerType,
    pub split: Split,
}

impl QAExample {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        context: impl Into<String>,
        rationale: impl Into<String>,
        gold_answer: impl Into<String>,
        answer_type: AnswerType,
        split: Split,
    ) -> Result<Self> {
        let example = QAExample {
            id: id.into(),
            question: question.into(),
            context: context.into(),
            rationale: rationale.into(),
            gold_answer: gold_answer.into(),
            answer_type,
            split,
        };
        example.validate()?;
        Ok(example)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gold_answer.is_empty() {
            return Err(ApsError::Config(format!(
                "example {}: gold answer is empty",
                self.id
            )));
        }
        if self.answer_type == AnswerType::MultipleChoice {
            if self.context.is_empty() {
                return Err(ApsError::Config(format!(
                    "example {}: multiple-choice item without an option list",
                    self.id
                )));
            }
            let gold = self.gold_answer.as_str();
            let is_letter = gold.len() == 1 && matches!(gold.as_bytes()[0], b'A'..=b'E');
            if !is_letter {
                return Err(ApsError::Config(format!(
                    "example {}: multiple-choice gold answer {:?} is not a single option letter",
                    self.id, gold
                )));
            }
        }
        Ok(())
    }
}

/// One candidate instruction prompt. `origin_cluster` is `None` when the
/// database was built without clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
    pub origin_cluster: Option<usize>,
}

/// The finite candidate prompt set, with the fingerprint of the
/// configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptDatabase {
    pub prompts: Vec<Prompt>,
    pub config_fingerprint: String,
    #[serde(default)]
    pub parent_fingerprint: Option<String>,
}

impl PromptDatabase {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn get(&self, prompt_id: &str) -> Option<&Prompt> {
        self.prompts.iter().find(|p| p.id == prompt_id)
    }
}

/// One training pair: for `example_id`, `good_prompt_id` scored at or
/// above the decision threshold recorded in `lambda` and `bad_prompt_id`
/// scored below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTuple {
    pub example_id: String,
    pub good_prompt_id: String,
    pub bad_prompt_id: String,
    pub good_fitness: f64,
    pub bad_fitness: f64,
    pub lambda: f64,
}

impl PreferenceTuple {
    pub fn validate(&self) -> Result<()> {
        if self.good_prompt_id == self.bad_prompt_id {
            return Err(ApsError::Config(format!(
                "preference tuple for {} pairs a prompt with itself",
                self.example_id
            )));
        }
        if self.good_fitness < self.lambda || self.bad_fitness >= self.lambda {
            return Err(ApsError::Config(format!(
                "preference tuple for {} violates the threshold rule (good {} / bad {} vs lambda {})",
                self.example_id, self.good_fitness, self.bad_fitness, self.lambda
            )));
        }
        Ok(())
    }
}

/// How prompts are paired with representative examples during synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairsMode {
    /// Score every prompt in the database against each representative
    /// example (default; matches the published call budget).
    FullDb,
    /// Score only prompts generated from the example's own cluster.
    WithinCluster,
}

impl std::fmt::Display for PairsMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PairsMode::FullDb => write!(f, "full-db"),
            PairsMode::WithinCluster => write!(f, "within-cluster"),
        }
    }
}

/// Core pipeline hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Number of clusters.
    pub c: usize,
    /// Prompts generated per cluster.
    pub n_p: usize,
    /// Demonstrations per meta-prompt.
    pub demo_count: usize,
    /// Representative examples per cluster used for synthesis.
    pub m: usize,
    /// Number of top-ranked prompts that vote at inference.
    pub k: usize,
    /// Margin in the preference loss.
    pub epsilon: f64,
    /// Master random seed.
    pub seed: u64,
    pub loss_mode: LossMode,
    pub pairs: PairsMode,
    /// When false, the prompt database is built from the train split as
    /// a single group instead of per cluster.
    pub clustering: bool,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            c: 10,
            n_p: 3,
            demo_count: 10,
            m: 10,
            k: 5,
            epsilon: 0.1,
            seed: 42,
            loss_mode: LossMode::Logistic,
            pairs: PairsMode::FullDb,
            clustering: true,
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 1000,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c < 1 {
            return Err(ApsError::Config("c must be at least 1".into()));
        }
        if self.n_p < 1 {
            return Err(ApsError::Config("n_p must be at least 1".into()));
        }
        if self.demo_count < 1 {
            return Err(ApsError::Config("demo_count must be at least 1".into()));
        }
        if self.m < 1 {
            return Err(ApsError::Config("m must be at least 1".into()));
        }
        if self.k < 1 || self.k > self.c * self.n_p {
            return Err(ApsError::Config(format!(
                "k must satisfy 1 <= k <= c * n_p (got k={}, c={}, n_p={})",
                self.k, self.c, self.n_p
            )));
        }
        if self.epsilon < 0.0 {
            return Err(ApsError::Config("epsilon must be nonnegative".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ApsError::Config("temperature must lie in [0, 2]".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ApsError::Config("top_p must lie in (0, 1]".into()));
        }
        if self.max_tokens == 0 {
            return Err(ApsError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}
