//! Inference: score every candidate prompt for an input, solve with the
//! top-k, and vote over the canonical answers. Ranking itself makes no
//! solver calls.

use serde::{Deserialize, Serialize};

use crate::domain::{canonical_answer, CanonicalAnswer, PipelineConfig, PromptDatabase, QAExample};
use crate::error::{ApsError, Result};
use crate::evaluator::{Checkpoint, Featurizer};
use crate::gateway::{answer_request, complete_many, LlmGateway, Stage};

/// Full descending ranking of the database for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrompts {
    pub entries: Vec<RankedPrompt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrompt {
    pub prompt_id: String,
    pub score: f64,
}

impl RankedPrompts {
    pub fn top_k(&self, k: usize) -> &[RankedPrompt] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn best(&self) -> &RankedPrompt {
        &self.entries[0]
    }
}

/// Score every prompt against the input and sort descending by score,
/// ties ascending by prompt id. No solver calls are made.
pub fn rank_prompts(
    checkpoint: &Checkpoint,
    example: &QAExample,
    db: &PromptDatabase,
    featurizer: &Featurizer,
) -> Result<RankedPrompts> {
    if db.is_empty() {
        return Err(ApsError::Precondition("prompt database is empty".into()));
    }
    if checkpoint.recipe_id != featurizer.recipe_id() {
        return Err(ApsError::CheckpointCompat(format!(
            "checkpoint was trained with feature recipe {:?} but the active provider yields {:?}",
            checkpoint.recipe_id,
            featurizer.recipe_id()
        )));
    }
    let mut entries = Vec::with_capacity(db.len());
    for prompt in &db.prompts {
        let features = featurizer.featurize(example, prompt)?;
        let score = checkpoint.model.score(&features)?;
        entries.push(RankedPrompt {
            prompt_id: prompt.id.clone(),
            score,
        });
    }
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.prompt_id.cmp(&b.prompt_id))
    });
    Ok(RankedPrompts { entries })
}

/// Most frequent answer; ties break toward the answer of the
/// highest-ranked prompt among the tied answers. Missing answers are
/// excluded unless every entry is missing.
pub fn mode_vote(answers: &[CanonicalAnswer]) -> Result<CanonicalAnswer> {
    if answers.is_empty() {
        return Err(ApsError::Precondition("cannot vote over no answers".into()));
    }
    let mut tally: Vec<(&str, usize, usize)> = Vec::new(); // (answer, count, first rank)
    for (rank, answer) in answers.iter().enumerate() {
        let text = match answer {
            CanonicalAnswer::Answer(a) => a.as_str(),
            CanonicalAnswer::NoAnswer => continue,
        };
        match tally.iter_mut().find(|(a, _, _)| *a == text) {
            Some(slot) => slot.1 += 1,
            None => tally.push((text, 1, rank)),
        }
    }
    if tally.is_empty() {
        return Ok(CanonicalAnswer::NoAnswer);
    }
    let winner = tally
        .iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .unwrap();
    Ok(CanonicalAnswer::Answer(winner.0.to_string()))
}

/// Record of one answered question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerTrace {
    pub example_id: String,
    pub mode: String,
    pub k: usize,
    pub ranked: Vec<RankedPrompt>,
    pub prompts_used: Vec<String>,
    pub raw_outputs: Vec<String>,
    pub canonical_answers: Vec<Option<String>>,
    pub excluded_no_answer: usize,
    pub tally: Vec<(String, usize)>,
    pub final_answer: Option<String>,
    pub gold_answer: String,
    pub correct: bool,
}

/// Answer one input with the k best prompts: k solver calls, then the
/// mode of the canonical answers (k = 1 skips the vote).
pub fn answer(
    example: &QAExample,
    checkpoint: &Checkpoint,
    db: &PromptDatabase,
    featurizer: &Featurizer,
    gateway: &dyn LlmGateway,
    config: &PipelineConfig,
    k: usize,
) -> Result<(CanonicalAnswer, AnswerTrace)> {
    if k < 1 {
        return Err(ApsError::Config("k must be at least 1".into()));
    }
    if k > db.len() {
        return Err(ApsError::Config(format!(
            "k = {k} exceeds the database size {}",
            db.len()
        )));
    }
    let ranked = rank_prompts(checkpoint, example, db, featurizer)?;
    let top: Vec<String> = ranked
        .top_k(k)
        .iter()
        .map(|r| r.prompt_id.clone())
        .collect();

    let mut requests = Vec::with_capacity(k);
    for prompt_id in &top {
        let prompt = db
            .get(prompt_id)
            .ok_or_else(|| ApsError::Index(format!("prompt {prompt_id} not in database")))?;
        requests.push(answer_request(Stage::Solve, Some(&prompt.text), example, config));
    }
    let responses = complete_many(gateway, &requests, gateway.max_in_flight());
    let mut raw_outputs = Vec::with_capacity(k);
    let mut answers = Vec::with_capacity(k);
    for (done, outcome) in responses.into_iter().enumerate() {
        let raw = outcome.map_err(|e| match e {
            ApsError::Gateway {
                stage,
                attempts,
                message,
            } => ApsError::Gateway {
                stage,
                attempts,
                message: format!(
                    "example {}: solve {}/{} failed, partial trace dropped: {message}",
                    example.id,
                    done + 1,
                    k
                ),
            },
            other => other,
        })?;
        answers.push(canonical_answer(&raw, example.answer_type));
        raw_outputs.push(raw);
    }

    let final_answer = if k == 1 {
        answers[0].clone()
    } else {
        mode_vote(&answers)?
    };

    let mut tally: Vec<(String, usize)> = Vec::new();
    for a in answers.iter().filter_map(|a| a.as_option()) {
        match tally.iter_mut().find(|(t, _)| t == a) {
            Some(slot) => slot.1 += 1,
            None => tally.push((a.to_string(), 1)),
        }
    }
    let correct = final_answer == CanonicalAnswer::Answer(example.gold_answer.clone());
    let trace = AnswerTrace {
        example_id: example.id.clone(),
        mode: if k == 1 {
            "aps-novote".to_string()
        } else {
            format!("aps-vote-{k}")
        },
        k,
        ranked: ranked.entries.clone(),
        prompts_used: top,
        raw_outputs,
        canonical_answers: answers.iter().cloned().map(Into::into).collect(),
        excluded_no_answer: answers.iter().filter(|a| !a.is_answer()).count(),
        tally,
        final_answer: final_answer.clone().into(),
        gold_answer: example.gold_answer.clone(),
        correct,
    };
    Ok((final_answer, trace))
}
