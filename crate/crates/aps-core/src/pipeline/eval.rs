//! Evaluation over a test split: the trained selector with and without
//! voting, plus the no-prompt and fixed-prompt baselines.

use serde::{Deserialize, Serialize};

use super::session::Session;
use super::stages::{
    load_checkpoint, load_database, load_synth_log, ArtifactPaths, StageRun,
};
use crate::domain::{
    canonical_answer, store_artifact, Artifact, ArtifactHeader, CanonicalAnswer, PromptDatabase,
    QAExample,
};
use crate::error::{ApsError, Result};
use crate::evaluator::Featurizer;
use crate::gateway::{answer_request, LedgerSnapshot, Stage};
use crate::hashing::fingerprint;
use crate::rank::{answer, AnswerTrace};
use crate::synth::SynthLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    NoPrompt,
    FixedPrompt,
    ApsNoVote,
    ApsVote(usize),
}

impl EvalMode {
    /// Parse a mode tag; `default_k` fills in `aps-vote` without a count.
    pub fn parse(tag: &str, default_k: usize) -> Result<Self> {
        let lower = tag.to_ascii_lowercase();
        match lower.as_str() {
            "no-prompt" => Ok(EvalMode::NoPrompt),
            "fixed-prompt" => Ok(EvalMode::FixedPrompt),
            "aps-novote" => Ok(EvalMode::ApsNoVote),
            "aps-vote" => Ok(EvalMode::ApsVote(default_k)),
            _ => {
                if let Some(rest) = lower.strip_prefix("aps-vote-") {
                    let k: usize = rest.parse().map_err(|_| {
                        ApsError::Config(format!("bad voting size in mode {tag:?}"))
                    })?;
                    if k < 1 {
                        return Err(ApsError::Config("voting size must be at least 1".into()));
                    }
                    Ok(EvalMode::ApsVote(k))
                } else {
                    Err(ApsError::Config(format!("unknown eval mode {tag:?}")))
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            EvalMode::NoPrompt => "no-prompt".into(),
            EvalMode::FixedPrompt => "fixed-prompt".into(),
            EvalMode::ApsNoVote => "aps-novote".into(),
            EvalMode::ApsVote(k) => format!("aps-vote-{k}"),
        }
    }
}

/// Accuracy of one evaluation run. `ledger` is the movement incurred by
/// this run alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub mode: String,
    pub n_evaluated: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    pub ledger: LedgerSnapshot,
    pub config_fingerprint: String,
    pub incomplete: bool,
}

impl Artifact for EvalReport {
    const KIND: &'static str = "eval-report";
    const VERSION: u32 = 1;

    fn fingerprint(&self) -> &str {
        &self.config_fingerprint
    }

    fn record_lines(&self) -> Result<Vec<String>> {
        Ok(vec![crate::domain::artifact::to_record(self)?])
    }

    fn from_parts(_header: &ArtifactHeader, records: &[&str]) -> Result<Self> {
        let line = records
            .first()
            .ok_or_else(|| ApsError::StaleArtifact("report file has no record".into()))?;
        crate::domain::artifact::parse_record(line, "eval report")
    }
}

/// Per-question traces backing one report.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLog {
    pub traces: Vec<AnswerTrace>,
    pub fingerprint: String,
    pub parent_fingerprint: Option<String>,
}

impl Artifact for TraceLog {
    const KIND: &'static str = "answer-traces";
    const VERSION: u32 = 1;

    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn parent(&self) -> Option<&str> {
        self.parent_fingerprint.as_deref()
    }

    fn record_lines(&self) -> Result<Vec<String>> {
        self.traces
            .iter()
            .map(crate::domain::artifact::to_record)
            .collect()
    }

    fn from_parts(header: &ArtifactHeader, records: &[&str]) -> Result<Self> {
        let traces = records
            .iter()
            .map(|line| crate::domain::artifact::parse_record(line, "answer trace"))
            .collect::<Result<Vec<_>>>()?;
        Ok(TraceLog {
            traces,
            fingerprint: header.fingerprint.clone(),
            parent_fingerprint: header.parent.clone(),
        })
    }
}

/// The fixed-prompt baseline's selection: highest mean fitness over the
/// representative training examples scored at synthesis time, ties by
/// prompt id.
pub fn select_fixed_prompt(log: &SynthLog, db: &PromptDatabase) -> Result<String> {
    if log.records.is_empty() {
        return Err(ApsError::Precondition(
            "synthesis log holds no fitness records".into(),
        ));
    }
    let mut best: Option<(f64, &str)> = None;
    for prompt in &db.prompts {
        let scores: Vec<f64> = log
            .records
            .iter()
            .filter(|r| r.prompt_id == prompt.id)
            .map(|r| r.fitness)
            .collect();
        if scores.is_empty() {
            continue;
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        // Strictly-greater keeps the lowest id on ties (db is id-ordered).
        if best.is_none_or(|(b, _)| mean > b) {
            best = Some((mean, &prompt.id));
        }
    }
    best.map(|(_, id)| id.to_string())
        .ok_or_else(|| ApsError::Precondition("no prompt has fitness records".into()))
}

fn baseline_trace(
    example: &QAExample,
    mode: &EvalMode,
    prompt_id: Option<&str>,
    raw: String,
    answer: &CanonicalAnswer,
) -> AnswerTrace {
    AnswerTrace {
        example_id: example.id.clone(),
        mode: mode.label(),
        k: 1,
        ranked: vec![],
        prompts_used: prompt_id.map(|p| vec![p.to_string()]).unwrap_or_default(),
        raw_outputs: vec![raw],
        canonical_answers: vec![answer.clone().into()],
        excluded_no_answer: usize::from(!answer.is_answer()),
        tally: answer
            .as_option()
            .map(|a| vec![(a.to_string(), 1)])
            .unwrap_or_default(),
        final_answer: answer.clone().into(),
        gold_answer: example.gold_answer.clone(),
        correct: *answer == CanonicalAnswer::Answer(example.gold_answer.clone()),
    }
}

/// Answer up to `limit` test questions in split order and measure
/// exact-match accuracy. Gateway exhaustion stops the run and flags the
/// report incomplete instead of failing it.
pub fn evaluate(
    session: &Session,
    mode: EvalMode,
    limit: Option<usize>,
) -> Result<(EvalReport, TraceLog, StageRun)> {
    if limit == Some(0) {
        return Err(ApsError::Precondition("empty evaluation refused".into()));
    }
    if session.test.is_empty() {
        return Err(ApsError::Precondition("test split is empty".into()));
    }
    let cap = limit.unwrap_or(session.test.len()).min(session.test.len());
    let chain = session.chain();
    let config = &session.config.pipeline;

    // Mode-specific setup, failing early when prerequisites are absent.
    let mut db = None;
    let mut checkpoint = None;
    let mut fixed_prompt_id = None;
    let upstream = match mode {
        EvalMode::NoPrompt => chain.corpus.clone(),
        EvalMode::FixedPrompt => {
            let database = load_database(session)?;
            let log = load_synth_log(session)?;
            fixed_prompt_id = Some(select_fixed_prompt(&log, &database)?);
            db = Some(database);
            chain.synth.clone()
        }
        EvalMode::ApsNoVote | EvalMode::ApsVote(_) => {
            db = Some(load_database(session)?);
            checkpoint = Some(load_checkpoint(session)?);
            chain.checkpoint.clone()
        }
    };
    if let EvalMode::ApsVote(k) = mode {
        let size = db.as_ref().map(|d| d.len()).unwrap_or(0);
        if k > size {
            return Err(ApsError::Config(format!(
                "k = {k} exceeds the database size {size}"
            )));
        }
    }

    let report_fingerprint = fingerprint(&[
        "eval",
        &mode.label(),
        &cap.to_string(),
        &upstream,
    ]);

    let featurizer = Featurizer::new(session.provider.as_ref());
    let before = session.gateway.ledger();
    let mut traces = Vec::with_capacity(cap);
    let mut n_correct = 0usize;
    let mut incomplete = false;

    for example in session.test.iter().take(cap) {
        let outcome: Result<AnswerTrace> = match &mode {
            EvalMode::NoPrompt => {
                let request = answer_request(Stage::Solve, None, example, config);
                session.gateway.complete(&request).map(|raw| {
                    let ca = canonical_answer(&raw, example.answer_type);
                    baseline_trace(example, &mode, None, raw, &ca)
                })
            }
            EvalMode::FixedPrompt => {
                let prompt_id = fixed_prompt_id.as_deref().expect("selected above");
                let database = db.as_ref().expect("loaded above");
                let prompt = database.get(prompt_id).ok_or_else(|| {
                    ApsError::Index(format!("fixed prompt {prompt_id} missing from database"))
                })?;
                let request =
                    answer_request(Stage::Solve, Some(&prompt.text), example, config);
                session.gateway.complete(&request).map(|raw| {
                    let ca = canonical_answer(&raw, example.answer_type);
                    baseline_trace(example, &mode, Some(prompt_id), raw, &ca)
                })
            }
            EvalMode::ApsNoVote | EvalMode::ApsVote(_) => {
                let k = match mode {
                    EvalMode::ApsVote(k) => k,
                    _ => 1,
                };
                answer(
                    example,
                    checkpoint.as_ref().expect("loaded above"),
                    db.as_ref().expect("loaded above"),
                    &featurizer,
                    session.gateway.as_ref(),
                    config,
                    k,
                )
                .map(|(_, trace)| trace)
            }
        };
        match outcome {
            Ok(trace) => {
                n_correct += usize::from(trace.correct);
                traces.push(trace);
            }
            Err(ApsError::Gateway { stage, attempts, message }) => {
                log::warn!(
                    "evaluation stopped early at {} answered questions: gateway stage {stage} \
                     failed after {attempts} attempt(s): {message}",
                    traces.len()
                );
                incomplete = true;
                break;
            }
            Err(other) => return Err(other),
        }
    }

    let n_evaluated = traces.len();
    if n_evaluated == 0 {
        return Err(ApsError::Precondition(
            "no questions were answered before the gateway gave out".into(),
        ));
    }
    let report = EvalReport {
        dataset: session.dataset_name.clone(),
        mode: mode.label(),
        n_evaluated,
        n_correct,
        accuracy: n_correct as f64 / n_evaluated as f64,
        ledger: session.gateway.ledger().delta(&before),
        config_fingerprint: report_fingerprint.clone(),
        incomplete,
    };
    let trace_log = TraceLog {
        traces,
        fingerprint: report_fingerprint,
        parent_fingerprint: Some(upstream),
    };
    let run = StageRun {
        stage: format!("eval[{}]", mode.label()),
        ledger_delta: report.ledger,
    };
    Ok((report, trace_log, run))
}

/// Evaluate and persist the report and its traces.
pub fn run_eval(
    session: &Session,
    mode: EvalMode,
    limit: Option<usize>,
) -> Result<(EvalReport, StageRun)> {
    std::fs::create_dir_all(&session.artifacts_dir)
        .map_err(|e| ApsError::io(session.artifacts_dir.display().to_string(), e))?;
    let paths = ArtifactPaths::new(&session.artifacts_dir);
    let (report, traces, run) = evaluate(session, mode, limit)?;
    store_artifact(&report, &paths.report(&report.mode))?;
    store_artifact(&traces, &paths.traces(&report.mode))?;
    Ok((report, run))
}

/// The full chain: cluster, forge, synth, train, then one evaluation in
/// the configured mode.
pub fn run_all(session: &Session) -> Result<(EvalReport, Vec<StageRun>)> {
    let mut runs = Vec::with_capacity(5);
    let (_, run) = super::stages::run_cluster(session)?;
    runs.push(run);
    let (_, run) = super::stages::run_forge(session)?;
    runs.push(run);
    let (_, run) = super::stages::run_synth(session)?;
    runs.push(run);
    let (_, run) = super::stages::run_train(session)?;
    runs.push(run);

    let mode = match &session.config.eval.mode {
        Some(tag) => EvalMode::parse(tag, session.config.pipeline.k)?,
        None => EvalMode::ApsVote(session.config.pipeline.k),
    };
    let (report, run) = run_eval(session, mode, session.config.effective_limit())?;
    runs.push(run);
    Ok((report, runs))
}
