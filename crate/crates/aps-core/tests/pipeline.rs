//! Staged-pipeline behavior: ordering errors, fingerprint chains,
//! idempotence, report arithmetic, and the ablation sweep.

use aps_core::domain::{load_artifact, Artifact, PipelineConfig};
use aps_core::gateway::SimSettings;
use aps_core::pipeline::{
    ablation_sweep, load_cluster_model, load_database, run_all, run_cluster, run_eval, run_forge, run_train, sizes_grid, toggles_grid, AppConfig, ArtifactPaths, EvalMode, Session,
    TraceLog,
};
use aps_core::ApsError;

fn small_config(dir: &std::path::Path) -> AppConfig {
    let mut config = AppConfig::default();
    config.artifacts_dir = dir.to_string_lossy().into_owned();
    config.sim = SimSettings {
        topics: 3,
        train: 30,
        test: 6,
        sim_seed: 7,
    };
    config.pipeline = PipelineConfig {
        c: 3,
        n_p: 2,
        m: 3,
        k: 2,
        ..PipelineConfig::default()
    };
    config.train.epochs = 10;
    config.train.hidden = 16;
    config
}

#[test]
fn stages_require_their_predecessors() {
    let dir = tempfile::tempdir().unwrap();
    let session = Session::new(small_config(dir.path())).unwrap();

    match run_forge(&session) {
        Err(ApsError::MissingStage { stage }) => assert_eq!(stage, "cluster"),
        other => panic!("expected missing-stage error, got {other:?}"),
    }
    match run_train(&session) {
        Err(ApsError::MissingStage { stage }) => assert_eq!(stage, "forge"),
        other => panic!("expected missing-stage error, got {other:?}"),
    }
    run_cluster(&session).unwrap();
    run_forge(&session).unwrap();
    match run_train(&session) {
        Err(ApsError::MissingStage { stage }) => assert_eq!(stage, "synth"),
        other => panic!("expected missing-stage error, got {other:?}"),
    }
    match run_eval(&session, EvalMode::ApsNoVote, None) {
        Err(ApsError::MissingStage { stage }) => assert_eq!(stage, "train"),
        other => panic!("expected missing-stage error, got {other:?}"),
    }
}

#[test]
fn changed_config_makes_artifacts_stale() {
    let dir = tempfile::tempdir().unwrap();
    let session = Session::new(small_config(dir.path())).unwrap();
    run_cluster(&session).unwrap();

    let mut reconfigured = small_config(dir.path());
    reconfigured.pipeline.seed = 999;
    let other = Session::new(reconfigured).unwrap();
    match load_cluster_model(&other) {
        Err(ApsError::StaleArtifact(message)) => {
            assert!(message.contains("re-run"), "message: {message}")
        }
        other => panic!("expected stale-artifact error, got {other:?}"),
    }
}

#[test]
fn artifacts_name_their_predecessors() {
    let dir = tempfile::tempdir().unwrap();
    let session = Session::new(small_config(dir.path())).unwrap();
    run_all(&session).unwrap();

    let chain = session.chain();
    let cluster = load_cluster_model(&session).unwrap();
    assert_eq!(cluster.parent_fingerprint.as_deref(), Some(chain.corpus.as_str()));
    let db = load_database(&session).unwrap();
    assert_eq!(db.parent_fingerprint.as_deref(), Some(chain.cluster.as_str()));
    let tuples = aps_core::pipeline::load_tuples(&session).unwrap();
    assert_eq!(tuples.parent_fingerprint.as_deref(), Some(chain.database.as_str()));
    let checkpoint = aps_core::pipeline::load_checkpoint(&session).unwrap();
    assert_eq!(checkpoint.parent_fingerprint.as_deref(), Some(chain.synth.as_str()));
}

#[test]
fn rerunning_a_stage_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let session = Session::new(small_config(dir.path())).unwrap();
    run_cluster(&session).unwrap();
    run_forge(&session).unwrap();
    let paths = ArtifactPaths::new(&session.artifacts_dir);
    let before = std::fs::read(paths.database()).unwrap();

    let session = Session::new(small_config(dir.path())).unwrap();
    run_forge(&session).unwrap();
    let after = std::fs::read(paths.database()).unwrap();
    assert_eq!(before, after);
}

#[test]
fn report_arithmetic_is_recomputable_from_traces() {
    let dir = tempfile::tempdir().unwrap();
    let session = Session::new(small_config(dir.path())).unwrap();
    let (report, _) = run_all(&session).unwrap();

    let paths = ArtifactPaths::new(&session.artifacts_dir);
    let traces: TraceLog = load_artifact(&paths.traces(&report.mode)).unwrap();
    assert_eq!(traces.traces.len(), report.n_evaluated);
    let recount = traces.traces.iter().filter(|t| t.correct).count();
    assert_eq!(recount, report.n_correct);
    assert_eq!(report.accuracy, recount as f64 / traces.traces.len() as f64);
    assert_eq!(traces.fingerprint(), report.config_fingerprint);
}

#[test]
fn eval_limit_caps_question_count() {
    let dir = tempfile::tempdir().unwrap();
    let session = Session::new(small_config(dir.path())).unwrap();
    run_all(&session).unwrap();
    let (report, _) = run_eval(&session, EvalMode::ApsNoVote, Some(2)).unwrap();
    assert_eq!(report.n_evaluated, 2);
    assert_eq!(report.ledger.solve, 2);
    assert!(matches!(
        run_eval(&session, EvalMode::ApsNoVote, Some(0)),
        Err(ApsError::Precondition(_))
    ));
}

#[test]
fn gateway_exhaustion_yields_a_partial_report() {
    use aps_core::gateway::{ChatRequest, LedgerSnapshot, LlmGateway};
    use std::sync::atomic::{AtomicU64, Ordering};

    /// Delegates to an inner gateway until the budget runs out, then
    /// fails like an exhausted endpoint.
    struct Budgeted {
        inner: Box<dyn LlmGateway>,
        remaining: AtomicU64,
    }

    impl LlmGateway for Budgeted {
        fn complete(&self, request: &ChatRequest) -> Result<String, ApsError> {
            let left = self
                .remaining
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |r| r.checked_sub(1));
            if left.is_err() {
                return Err(ApsError::Gateway {
                    stage: request.stage,
                    attempts: 4,
                    message: "simulated outage".into(),
                });
            }
            self.inner.complete(request)
        }
        fn ledger(&self) -> LedgerSnapshot {
            self.inner.ledger()
        }
        fn model_id(&self) -> String {
            self.inner.model_id()
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let session = Session::new(small_config(dir.path())).unwrap();
    run_all(&session).unwrap();

    let mut session = Session::new(small_config(dir.path())).unwrap();
    // Enough budget for three answered questions, then outage.
    let placeholder: Box<dyn LlmGateway> = Box::new(aps_core::gateway::SimGateway::new(
        aps_core::gateway::SimWorld::new(1, vec!["x".into()], vec![], 0).unwrap(),
    ));
    let inner = std::mem::replace(&mut session.gateway, placeholder);
    session.gateway = Box::new(Budgeted {
        inner,
        remaining: AtomicU64::new(3),
    });

    let (report, _) = run_eval(&session, EvalMode::ApsNoVote, None).unwrap();
    assert!(report.incomplete);
    assert_eq!(report.n_evaluated, 3);
    assert_eq!(report.accuracy, report.n_correct as f64 / 3.0);
}

#[test]
fn toggles_sweep_has_four_isolated_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let grid = toggles_grid(&config);
    assert_eq!(grid.len(), 4);
    let rows = ablation_sweep(&config, &grid).unwrap();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        assert!(
            row.report.is_some() || row.error.is_some(),
            "row {} has neither report nor error",
            row.label
        );
    }
    // The clustered voting row must have succeeded.
    let best = rows
        .iter()
        .find(|r| r.label == "cluster=on vote=on")
        .unwrap();
    assert!(best.report.is_some(), "error: {:?}", best.error);
}

#[test]
fn sizes_sweep_matches_the_grid_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    config.sim.train = 40;
    let grid = sizes_grid(&config, &[2, 4], &[2, 3]);
    assert_eq!(grid.len(), 4);
    let labels: Vec<&str> = grid.iter().map(|g| g.label.as_str()).collect();
    assert_eq!(
        labels,
        vec!["c=2 n_p=2", "c=2 n_p=3", "c=4 n_p=2", "c=4 n_p=3"]
    );
    let rows = ablation_sweep(&config, &grid).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.report.is_some()), "rows: {rows:?}");
}

#[test]
fn empty_sweep_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    assert!(matches!(
        ablation_sweep(&config, &[]),
        Err(ApsError::Precondition(_))
    ));
}
