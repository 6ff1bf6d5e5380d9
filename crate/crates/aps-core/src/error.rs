//! Error type shared across the pipeline.

use crate::gateway::Stage;

pub type Result<T> = std::result::Result<T, ApsError>;

#[derive(Debug, thiserror::Error)]
pub enum ApsError {
    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// A caller violated a documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Malformed input record.
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// I/O failure, tagged with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Artifact on disk does not match what the current configuration
    /// would produce (wrong kind, version, fingerprint, or truncated).
    #[error("stale artifact: {0}")]
    StaleArtifact(String),

    /// A pipeline stage was invoked before its predecessor produced output.
    #[error("stage `{stage}` has not produced its artifact yet; run it first")]
    MissingStage { stage: String },

    /// LLM endpoint failed after exhausting retries.
    #[error("gateway error at stage {stage:?} after {attempts} attempt(s): {message}")]
    Gateway {
        stage: Stage,
        attempts: u32,
        message: String,
    },

    /// Endpoint answered but the body did not conform to the wire format.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Embedding provider failure or contract violation.
    #[error("embedding provider error: {0}")]
    Provider(String),

    /// Prompt generation produced nothing usable for a cluster.
    #[error("prompt generation failed for cluster {cluster}: {message}")]
    Forge { cluster: String, message: String },

    /// The offline simulator received a request it cannot interpret.
    #[error("simulator error: {0}")]
    Harness(String),

    /// Tensor/vector dimension mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Evaluator training cannot proceed.
    #[error("training error: {0}")]
    Train(String),

    /// Checkpoint featurization recipe does not match the active provider.
    #[error("checkpoint incompatible: {0}")]
    CheckpointCompat(String),

    /// Out-of-range cluster or prompt index.
    #[error("index error: {0}")]
    Index(String),
}

impl ApsError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        ApsError::Io {
            path: path.into(),
            source,
        }
    }
}
