//! Pipeline orchestration: configuration, sessions, staged runs with
//! fingerprint-chained artifacts, evaluation, and ablation sweeps.

pub mod ablate;
pub mod config;
pub mod eval;
pub mod session;
pub mod stages;

pub use ablate::{ablation_sweep, format_rows, sizes_grid, toggles_grid, AblationConfig, AblationRow};
pub use config::{AppConfig, BackendKind, CorpusSettings, EmbeddingSettings, EvalSettings};
pub use eval::{evaluate, run_all, run_eval, select_fixed_prompt, EvalMode, EvalReport, TraceLog};
pub use session::{Chain, Session};
pub use stages::{
    load_checkpoint, load_cluster_model, load_database, load_synth_log, load_tuples, run_answer,
    run_cluster, run_forge, run_synth, run_train, ArtifactPaths, StageRun,
};
