//! Run configuration: one declarative TOML file with environment
//! variable interpolation for secrets, plus programmatic defaults so a
//! bare sim run needs no file at all.

use std::path::Path;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::PipelineConfig;
use crate::embed::RemoteEmbedderConfig;
use crate::error::{ApsError, Result};
use crate::evaluator::TrainConfig;
use crate::gateway::{EndpointConfig, SimSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Sim,
    Remote,
}

impl BackendKind {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "sim" => Ok(BackendKind::Sim),
            "remote" => Ok(BackendKind::Remote),
            other => Err(ApsError::Config(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSettings {
    /// "mock" or "remote".
    pub provider: String,
    /// Mock vector width.
    pub dim: usize,
    /// Mock hash seed.
    pub seed: u64,
    pub remote: Option<RemoteEmbedderConfig>,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        EmbeddingSettings {
            provider: "mock".into(),
            dim: 32,
            seed: 0,
            remote: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSettings {
    pub format: String,
    pub train_path: String,
    pub test_path: String,
}

/// Live evaluation costs real money, so remote runs cap the question
/// count unless explicitly overridden.
pub const REMOTE_DEFAULT_LIMIT: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct EvalSettings {
    /// no-prompt | fixed-prompt | aps-novote | aps-vote-<k>
    pub mode: Option<String>,
    pub limit: Option<usize>,
    /// Evaluate the whole split even on the remote backend.
    pub full: bool,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub backend: BackendKind,
    pub artifacts_dir: String,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub embedding: EmbeddingSettings,
    pub sim: SimSettings,
    pub endpoint: Option<EndpointConfig>,
    pub corpus: Option<CorpusSettings>,
    pub eval: EvalSettings,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            backend: BackendKind::Sim,
            artifacts_dir: "artifacts".into(),
            pipeline: PipelineConfig::default(),
            train: TrainConfig::default(),
            embedding: EmbeddingSettings::default(),
            sim: SimSettings::default(),
            endpoint: None,
            corpus: None,
            eval: EvalSettings::default(),
        }
    }
}

static ENV_PATTERN: Lazy<Regex> = Lazy::new(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap());

/// Replace `${VAR}` with the environment value; unset variables are an
/// error so secrets never silently vanish.
pub fn interpolate_env(text: &str) -> Result<String> {
    let mut failure = None;
    let out = ENV_PATTERN.replace_all(text, |caps: &regex::Captures<'_>| {
        let name = caps.get(1).unwrap().as_str();
        match std::env::var(name) {
            Ok(value) => value,
            Err(_) => {
                failure = Some(name.to_string());
                String::new()
            }
        }
    });
    match failure {
        Some(name) => Err(ApsError::Config(format!(
            "config references unset environment variable {name}"
        ))),
        None => Ok(out.into_owned()),
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|e| ApsError::io(&display, e))?;
        let interpolated = interpolate_env(&raw)?;
        let config: AppConfig = toml::from_str(&interpolated)
            .map_err(|e| ApsError::Config(format!("{display}: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.resolved_train().validate()?;
        match self.embedding.provider.as_str() {
            "mock" => {
                if self.embedding.dim == 0 {
                    return Err(ApsError::Config("embedding dim must be positive".into()));
                }
            }
            "remote" => {
                if self.embedding.remote.is_none() {
                    return Err(ApsError::Config(
                        "embedding.provider = \"remote\" requires an [embedding.remote] table"
                            .into(),
                    ));
                }
            }
            other => {
                return Err(ApsError::Config(format!(
                    "unknown embedding provider {other:?}"
                )))
            }
        }
        if self.backend == BackendKind::Remote {
            if self.endpoint.is_none() {
                return Err(ApsError::Config(
                    "remote backend requires an [endpoint] table".into(),
                ));
            }
            if self.corpus.is_none() {
                return Err(ApsError::Config(
                    "remote backend requires a [corpus] table".into(),
                ));
            }
        }
        if self.eval.limit == Some(0) {
            return Err(ApsError::Config("eval limit of 0 is an empty evaluation".into()));
        }
        Ok(())
    }

    /// Optimizer settings with the margin and loss mode taken from the
    /// pipeline block, which owns them.
    pub fn resolved_train(&self) -> TrainConfig {
        TrainConfig {
            epsilon: self.pipeline.epsilon,
            loss_mode: self.pipeline.loss_mode,
            ..self.train.clone()
        }
    }

    /// Question cap for one evaluation run. `None` means the whole split.
    pub fn effective_limit(&self) -> Option<usize> {
        match (self.eval.limit, self.backend, self.eval.full) {
            (Some(n), _, _) => Some(n),
            (None, BackendKind::Remote, false) => Some(REMOTE_DEFAULT_LIMIT),
            _ => None,
        }
    }

    /// Copy safe to write to disk: secrets replaced by a placeholder.
    pub fn redacted(&self) -> AppConfig {
        let mut copy = self.clone();
        if let Some(endpoint) = &mut copy.endpoint {
            if endpoint.api_key.is_some() {
                endpoint.api_key = Some("<redacted>".into());
            }
        }
        if let Some(remote) = &mut copy.embedding.remote {
            if remote.api_key.is_some() {
                remote.api_key = Some("<redacted>".into());
            }
        }
        copy
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(&self.redacted())
            .map_err(|e| ApsError::Config(format!("config serialization failed: {e}")))
    }
}
