//! Single choke point for all LLM traffic.
//!
//! Three pipeline roles go through here: the prompt generator, the data
//! synthesizer, and the downstream solver. They share one wire dialect
//! and differ only by stage tag. Every successful completion increments
//! the per-stage call ledger exactly once; transport retries do not.

pub mod remote;
pub mod sim;

pub use remote::{EndpointConfig, HttpTransport, RemoteGateway, Transport, TransportReply};
pub use sim::{build_sim_world, sim_complete, SimGateway, SimQuestion, SimSettings, SimWorld};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{PipelineConfig, QAExample};
use crate::error::{ApsError, Result};

/// Which pipeline role issued a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Prompt generation.
    Forge,
    /// Preference-data synthesis.
    Synthesize,
    /// Downstream question answering.
    Solve,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Forge => write!(f, "forge"),
            Stage::Synthesize => write!(f, "synthesize"),
            Stage::Solve => write!(f, "solve"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub stage: Stage,
}

impl ChatRequest {
    pub fn new(stage: Stage, messages: Vec<ChatMessage>, config: &PipelineConfig) -> Self {
        ChatRequest {
            messages,
            temperature: config.temperature,
            top_p: config.top_p,
            max_tokens: config.max_tokens,
            stage,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(ApsError::Precondition("chat request has no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ApsError::Config("temperature outside [0, 2]".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ApsError::Config("top_p outside (0, 1]".into()));
        }
        if self.max_tokens == 0 {
            return Err(ApsError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn system_text(&self) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }

    pub fn user_text(&self) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

/// Build the solver/synthesizer request for (prompt, example): the
/// instruction prompt rides as the system message, the question plus
/// context as the user message. `prompt` of `None` is the no-prompt
/// baseline.
pub fn answer_request(
    stage: Stage,
    prompt: Option<&str>,
    example: &QAExample,
    config: &PipelineConfig,
) -> ChatRequest {
    let mut messages = Vec::with_capacity(2);
    if let Some(p) = prompt {
        messages.push(ChatMessage {
            role: Role::System,
            content: p.to_string(),
        });
    }
    let mut user = example.question.clone();
    if !example.context.is_empty() {
        user.push('\n');
        user.push_str(&example.context);
    }
    messages.push(ChatMessage {
        role: Role::User,
        content: user,
    });
    ChatRequest::new(stage, messages, config)
}

/// Monotone per-stage completion counts. Updates are atomic; snapshots
/// are plain values.
#[derive(Debug, Default)]
pub struct CallLedger {
    forge: AtomicU64,
    synthesize: AtomicU64,
    solve: AtomicU64,
}

impl CallLedger {
    pub fn record(&self, stage: Stage) {
        match stage {
            Stage::Forge => self.forge.fetch_add(1, Ordering::Relaxed),
            Stage::Synthesize => self.synthesize.fetch_add(1, Ordering::Relaxed),
            Stage::Solve => self.solve.fetch_add(1, Ordering::Relaxed),
        };
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            forge: self.forge.load(Ordering::Relaxed),
            synthesize: self.synthesize.load(Ordering::Relaxed),
            solve: self.solve.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub forge: u64,
    pub synthesize: u64,
    pub solve: u64,
}

impl LedgerSnapshot {
    pub fn total(&self) -> u64 {
        self.forge + self.synthesize + self.solve
    }

    /// Counts accumulated since `earlier`.
    pub fn delta(&self, earlier: &LedgerSnapshot) -> LedgerSnapshot {
        LedgerSnapshot {
            forge: self.forge - earlier.forge,
            synthesize: self.synthesize - earlier.synthesize,
            solve: self.solve - earlier.solve,
        }
    }

    pub fn get(&self, stage: Stage) -> u64 {
        match stage {
            Stage::Forge => self.forge,
            Stage::Synthesize => self.synthesize,
            Stage::Solve => self.solve,
        }
    }
}

impl std::fmt::Display for LedgerSnapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "forge={} synthesize={} solve={} total={}",
            self.forge,
            self.synthesize,
            self.solve,
            self.total()
        )
    }
}

/// A configured LLM backend plus its ledger.
pub trait LlmGateway: Send + Sync {
    /// One completion; increments the ledger for the request stage by
    /// exactly 1 on success.
    fn complete(&self, request: &ChatRequest) -> Result<String>;

    fn ledger(&self) -> LedgerSnapshot;

    /// Generator model identifier, used in artifact fingerprints.
    fn model_id(&self) -> String;

    /// How many requests may be in flight at once.
    fn max_in_flight(&self) -> usize {
        1
    }
}

/// Expected call counts for one full pipeline run at a given database
/// size: at most one generation completion per prompt, and exactly one
/// synthesis completion per (representative example, prompt) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpectedCounts {
    pub forge_max: u64,
    pub synthesize: u64,
}

pub fn ledger_expectation(config: &PipelineConfig, db_size: usize) -> ExpectedCounts {
    ExpectedCounts {
        forge_max: db_size as u64,
        synthesize: (config.c * config.m * db_size) as u64,
    }
}

/// Run several requests through the gateway with up to `workers`
/// threads, returning responses in submission order.
pub fn complete_many(
    gateway: &dyn LlmGateway,
    requests: &[ChatRequest],
    workers: usize,
) -> Vec<Result<String>> {
    let workers = workers.max(1).min(requests.len().max(1));
    if workers <= 1 || requests.len() <= 1 {
        return requests.iter().map(|r| gateway.complete(r)).collect();
    }
    let next = AtomicU64::new(0);
    let results: Vec<std::sync::Mutex<Option<Result<String>>>> =
        requests.iter().map(|_| std::sync::Mutex::new(None)).collect();
    let results = Arc::new(results);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let next = &next;
            let results = Arc::clone(&results);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed) as usize;
                if i >= requests.len() {
                    break;
                }
                let outcome = gateway.complete(&requests[i]);
                *results[i].lock().unwrap() = Some(outcome);
            });
        }
    });
    Arc::try_unwrap(results)
        .expect("worker threads joined")
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every slot filled"))
        .collect()
}
