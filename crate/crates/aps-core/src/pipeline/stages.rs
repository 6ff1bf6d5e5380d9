//! Stage runners. Each stage loads its predecessors' artifacts
//! (verifying the fingerprint chain), does its work, and writes its own
//! artifact atomically. Re-running a stage with unchanged inputs
//! reproduces a byte-identical file.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::session::Session;
use crate::cluster::{fit_cluster_model, ClusterModel};
use crate::domain::{
    load_artifact, store_artifact, Artifact, ExampleIndex, PromptDatabase,
};
use crate::embed::embed_all;
use crate::error::{ApsError, Result};
use crate::evaluator::{train, Checkpoint, Featurizer};
use crate::forge::build_database;
use crate::gateway::LedgerSnapshot;
use crate::rank::{answer, AnswerTrace};
use crate::synth::{build_preference_dataset, PreferenceDataset, SynthLog};

const EMBED_BATCH: usize = 64;

/// Where each stage's artifact lives.
pub struct ArtifactPaths {
    dir: PathBuf,
}

impl ArtifactPaths {
    pub fn new(dir: &std::path::Path) -> Self {
        ArtifactPaths {
            dir: dir.to_path_buf(),
        }
    }

    pub fn cluster(&self) -> PathBuf {
        self.dir.join("cluster.jsonl")
    }

    pub fn database(&self) -> PathBuf {
        self.dir.join("prompts.jsonl")
    }

    pub fn synth_log(&self) -> PathBuf {
        self.dir.join("synth.jsonl")
    }

    pub fn tuples(&self) -> PathBuf {
        self.dir.join("tuples.jsonl")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.jsonl")
    }

    pub fn report(&self, mode: &str) -> PathBuf {
        self.dir.join(format!("report-{mode}.jsonl"))
    }

    pub fn traces(&self, mode: &str) -> PathBuf {
        self.dir.join(format!("traces-{mode}.jsonl"))
    }

    pub fn resolved_config(&self) -> PathBuf {
        self.dir.join("config.resolved.toml")
    }
}

/// Ledger movement attributed to one stage run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRun {
    pub stage: String,
    pub ledger_delta: LedgerSnapshot,
}

fn ensure_dir(session: &Session) -> Result<ArtifactPaths> {
    let dir = &session.artifacts_dir;
    std::fs::create_dir_all(dir).map_err(|e| ApsError::io(dir.display().to_string(), e))?;
    Ok(ArtifactPaths::new(dir))
}

fn write_resolved_config(session: &Session, paths: &ArtifactPaths) -> Result<()> {
    let text = session.config.to_toml()?;
    let path = paths.resolved_config();
    std::fs::write(&path, text).map_err(|e| ApsError::io(path.display().to_string(), e))
}

fn load_stage_artifact<A: Artifact>(
    path: &std::path::Path,
    stage: &str,
    expected_fingerprint: &str,
) -> Result<A> {
    if !path.exists() {
        return Err(ApsError::MissingStage {
            stage: stage.to_string(),
        });
    }
    let artifact: A = load_artifact(path)?;
    if artifact.fingerprint() != expected_fingerprint {
        return Err(ApsError::StaleArtifact(format!(
            "{} artifact at {} was produced by a different configuration \
             (expected fingerprint {}, found {}); re-run `{stage}`",
            stage,
            path.display(),
            expected_fingerprint,
            artifact.fingerprint()
        )));
    }
    Ok(artifact)
}

pub fn load_cluster_model(session: &Session) -> Result<ClusterModel> {
    let paths = ArtifactPaths::new(&session.artifacts_dir);
    load_stage_artifact(&paths.cluster(), "cluster", &session.chain().cluster)
}

pub fn load_database(session: &Session) -> Result<PromptDatabase> {
    let paths = ArtifactPaths::new(&session.artifacts_dir);
    load_stage_artifact(&paths.database(), "forge", &session.chain().database)
}

pub fn load_tuples(session: &Session) -> Result<PreferenceDataset> {
    let paths = ArtifactPaths::new(&session.artifacts_dir);
    load_stage_artifact(&paths.tuples(), "synth", &session.chain().synth)
}

pub fn load_synth_log(session: &Session) -> Result<SynthLog> {
    let paths = ArtifactPaths::new(&session.artifacts_dir);
    load_stage_artifact(&paths.synth_log(), "synth", &session.chain().synth)
}

pub fn load_checkpoint(session: &Session) -> Result<Checkpoint> {
    let paths = ArtifactPaths::new(&session.artifacts_dir);
    load_stage_artifact(&paths.checkpoint(), "train", &session.chain().checkpoint)
}

/// Embed the training split and fit the cluster model.
pub fn run_cluster(session: &Session) -> Result<(ClusterModel, StageRun)> {
    let paths = ensure_dir(session)?;
    write_resolved_config(session, &paths)?;
    let before = session.gateway.ledger();
    let chain = session.chain();

    let texts = session.clustering_texts();
    let vectors = embed_all(session.provider.as_ref(), &texts, EMBED_BATCH)?;
    let model = fit_cluster_model(
        &session.train,
        &vectors,
        session.config.pipeline.c,
        session.config.pipeline.seed,
        chain.cluster,
        Some(chain.corpus),
    )?;
    store_artifact(&model, &paths.cluster())?;
    Ok((
        model,
        StageRun {
            stage: "cluster".into(),
            ledger_delta: session.gateway.ledger().delta(&before),
        },
    ))
}

/// Generate the prompt database from cluster demonstrations.
pub fn run_forge(session: &Session) -> Result<(PromptDatabase, StageRun)> {
    let paths = ensure_dir(session)?;
    let cluster_model = load_cluster_model(session)?;
    let before = session.gateway.ledger();
    let chain = session.chain();

    let db = build_database(
        &session.train,
        &cluster_model,
        session.gateway.as_ref(),
        &session.config.pipeline,
        chain.database,
        Some(chain.cluster),
    )?;
    store_artifact(&db, &paths.database())?;
    Ok((
        db,
        StageRun {
            stage: "forge".into(),
            ledger_delta: session.gateway.ledger().delta(&before),
        },
    ))
}

/// Synthesize the preference dataset.
pub fn run_synth(session: &Session) -> Result<(PreferenceDataset, StageRun)> {
    let paths = ensure_dir(session)?;
    let cluster_model = load_cluster_model(session)?;
    let db = load_database(session)?;
    let before = session.gateway.ledger();
    let chain = session.chain();

    let index = ExampleIndex::new(&session.train);
    let result = build_preference_dataset(
        &index,
        &cluster_model,
        &db,
        session.gateway.as_ref(),
        &session.config.pipeline,
    )?;
    let dataset = PreferenceDataset {
        pairs_mode: session.config.pipeline.pairs,
        tuples: result.tuples,
        fingerprint: chain.synth.clone(),
        parent_fingerprint: Some(chain.database.clone()),
    };
    let log = SynthLog {
        records: result.fitness,
        partitions: result.partitions,
        fingerprint: chain.synth,
        parent_fingerprint: Some(chain.database),
    };
    store_artifact(&dataset, &paths.tuples())?;
    store_artifact(&log, &paths.synth_log())?;
    Ok((
        dataset,
        StageRun {
            stage: "synth".into(),
            ledger_delta: session.gateway.ledger().delta(&before),
        },
    ))
}

/// Train the evaluator on the synthesized tuples.
pub fn run_train(session: &Session) -> Result<(Checkpoint, StageRun)> {
    let paths = ensure_dir(session)?;
    let db = load_database(session)?;
    let dataset = load_tuples(session)?;
    let before = session.gateway.ledger();
    let chain = session.chain();

    let featurizer = Featurizer::new(session.provider.as_ref());
    let index = ExampleIndex::new(&session.train);
    let checkpoint = train(
        &dataset.tuples,
        &featurizer,
        &index,
        &db,
        &session.config.resolved_train(),
        session.config.pipeline.seed,
        chain.checkpoint,
        Some(chain.synth),
    )?;
    store_artifact(&checkpoint, &paths.checkpoint())?;
    Ok((
        checkpoint,
        StageRun {
            stage: "train".into(),
            ledger_delta: session.gateway.ledger().delta(&before),
        },
    ))
}

/// Answer a single question from the test split (by index or id) with
/// the trained evaluator.
pub fn run_answer(session: &Session, selector: &str) -> Result<(AnswerTrace, StageRun)> {
    let db = load_database(session)?;
    let checkpoint = load_checkpoint(session)?;
    let before = session.gateway.ledger();

    let example = match selector.parse::<usize>() {
        Ok(index) => session.test.get(index).ok_or_else(|| {
            ApsError::Index(format!(
                "test index {index} out of range ({} questions)",
                session.test.len()
            ))
        })?,
        Err(_) => session
            .test
            .iter()
            .chain(&session.train)
            .find(|e| e.id == selector)
            .ok_or_else(|| ApsError::Index(format!("no example with id {selector:?}")))?,
    };

    let featurizer = Featurizer::new(session.provider.as_ref());
    let (_, trace) = answer(
        example,
        &checkpoint,
        &db,
        &featurizer,
        session.gateway.as_ref(),
        &session.config.pipeline,
        session.config.pipeline.k,
    )?;
    Ok((
        trace,
        StageRun {
            stage: "answer".into(),
            ledger_delta: session.gateway.ledger().delta(&before),
        },
    ))
}
