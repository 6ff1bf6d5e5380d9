//! Pipeline runner: each stage is a subcommand over a shared artifact
//! directory; `all` chains them and evaluates.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use aps_core::domain::PairsMode;
use aps_core::evaluator::LossMode;
use aps_core::pipeline::{
    ablation_sweep, format_rows, run_all, run_answer, run_cluster, run_eval, run_forge, run_synth,
    run_train, sizes_grid, toggles_grid, AppConfig, BackendKind, EvalMode, EvalReport, Session,
    StageRun,
};

#[derive(Parser)]
#[command(
    name = "aps",
    about = "Automatic prompt selection: cluster, generate prompts, train a prompt scorer, answer with top-k voting",
    version
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// LLM backend.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,

    /// Artifact directory (overrides the config file).
    #[arg(long, global = true)]
    artifacts: Option<PathBuf>,

    /// Master random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Voting size for selection and evaluation.
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Maximum number of test questions to evaluate.
    #[arg(long, global = true)]
    limit: Option<usize>,

    /// Evaluate the whole split even on the remote backend.
    #[arg(long, global = true)]
    full: bool,

    /// Evaluation mode: no-prompt | fixed-prompt | aps-novote | aps-vote-<k>.
    #[arg(long, global = true)]
    mode: Option<String>,

    /// Prompt pairing during synthesis.
    #[arg(long, global = true, value_enum)]
    pairs: Option<PairsArg>,

    /// Preference loss form.
    #[arg(long, global = true, value_enum)]
    loss: Option<LossArg>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Sim,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairsArg {
    FullDb,
    WithinCluster,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Logistic,
    Literal,
}

#[derive(Subcommand)]
enum Command {
    /// Embed the training split and fit the cluster model.
    Cluster,
    /// Generate the candidate prompt database from cluster demonstrations.
    Forge,
    /// Synthesize the pairwise preference dataset.
    Synth,
    /// Train the prompt evaluator on the preference dataset.
    Train,
    /// Answer one test question and print its trace.
    Answer(AnswerArgs),
    /// Evaluate a mode over the test split.
    Eval,
    /// Run the full chain: cluster, forge, synth, train, eval.
    All,
    /// Run a configuration sweep; failures isolate per row.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct AnswerArgs {
    /// Test-split index or example id.
    #[arg(long)]
    id: String,
}

#[derive(Args)]
struct AblateArgs {
    /// toggles: clustering x voting grid; sizes: (c, n_p) grid.
    #[arg(long, value_enum)]
    sweep: SweepArg,

    /// Cluster counts for the sizes sweep.
    #[arg(long, value_delimiter = ',', default_value = "10,20")]
    c_values: Vec<usize>,

    /// Prompts-per-cluster for the sizes sweep.
    #[arg(long, value_delimiter = ',', default_value = "3,5")]
    np_values: Vec<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    Toggles,
    Sizes,
}

fn build_config(cli: &Cli) -> Result<AppConfig, aps_core::ApsError> {
    let mut config = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(backend) = cli.backend {
        config.backend = match backend {
            BackendArg::Sim => BackendKind::Sim,
            BackendArg::Remote => BackendKind::Remote,
        };
    }
    if let Some(dir) = &cli.artifacts {
        config.artifacts_dir = dir.to_string_lossy().into_owned();
    }
    if let Some(seed) = cli.seed {
        config.pipeline.seed = seed;
    }
    if let Some(k) = cli.k {
        config.pipeline.k = k;
    }
    if let Some(limit) = cli.limit {
        config.eval.limit = Some(limit);
    }
    if cli.full {
        config.eval.full = true;
    }
    if let Some(mode) = &cli.mode {
        config.eval.mode = Some(mode.clone());
    }
    if let Some(pairs) = cli.pairs {
        config.pipeline.pairs = match pairs {
            PairsArg::FullDb => PairsMode::FullDb,
            PairsArg::WithinCluster => PairsMode::WithinCluster,
        };
    }
    if let Some(loss) = cli.loss {
        config.pipeline.loss_mode = match loss {
            LossArg::Logistic => LossMode::Logistic,
            LossArg::Literal => LossMode::Literal,
        };
    }
    config.validate()?;
    Ok(config)
}

fn print_stage(run: &StageRun) {
    println!("stage {}: ledger delta {}", run.stage, run.ledger_delta);
}

fn print_report(report: &EvalReport) {
    println!();
    println!(
        "{:<10} {:<14} {:>6} {:>8} {:>9}  status",
        "dataset", "mode", "n", "correct", "accuracy"
    );
    println!(
        "{:<10} {:<14} {:>6} {:>8} {:>9.4}  {}",
        report.dataset,
        report.mode,
        report.n_evaluated,
        report.n_correct,
        report.accuracy,
        if report.incomplete { "incomplete" } else { "complete" }
    );
    println!("eval ledger delta: {}", report.ledger);
    println!("config fingerprint: {}", report.config_fingerprint);
}

fn eval_mode(session: &Session) -> Result<EvalMode, aps_core::ApsError> {
    match &session.config.eval.mode {
        Some(tag) => EvalMode::parse(tag, session.config.pipeline.k),
        None => Ok(EvalMode::ApsVote(session.config.pipeline.k)),
    }
}

fn run(cli: Cli) -> Result<(), aps_core::ApsError> {
    let config = build_config(&cli)?;

    match &cli.command {
        Command::Cluster => {
            let session = Session::new(config)?;
            let (model, run) = run_cluster(&session)?;
            print_stage(&run);
            println!(
                "clustered {} examples into {} groups (inertia {:.6}, {} iterations)",
                model.assignments.len(),
                model.c,
                model.inertia,
                model.iterations
            );
        }
        Command::Forge => {
            let session = Session::new(config)?;
            let (db, run) = run_forge(&session)?;
            print_stage(&run);
            println!("prompt database holds {} prompts", db.len());
        }
        Command::Synth => {
            let session = Session::new(config)?;
            let (dataset, run) = run_synth(&session)?;
            print_stage(&run);
            println!("preference dataset holds {} tuples", dataset.tuples.len());
        }
        Command::Train => {
            let session = Session::new(config)?;
            let (checkpoint, run) = run_train(&session)?;
            print_stage(&run);
            println!(
                "trained evaluator: {} parameters, final epoch loss {:.6}",
                checkpoint.model.params.len(),
                checkpoint.loss_curve.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Answer(args) => {
            let session = Session::new(config)?;
            let (trace, run) = run_answer(&session, &args.id)?;
            print_stage(&run);
            let rendered = serde_json::to_string_pretty(&trace)
                .map_err(|e| aps_core::ApsError::Protocol(e.to_string()))?;
            println!("{rendered}");
        }
        Command::Eval => {
            let session = Session::new(config)?;
            let mode = eval_mode(&session)?;
            let limit = session.config.effective_limit();
            let (report, run) = run_eval(&session, mode, limit)?;
            print_stage(&run);
            print_report(&report);
        }
        Command::All => {
            let session = Session::new(config)?;
            let (report, runs) = run_all(&session)?;
            for run in &runs {
                print_stage(run);
            }
            print_report(&report);
        }
        Command::Ablate(args) => {
            let grid = match args.sweep {
                SweepArg::Toggles => toggles_grid(&config),
                SweepArg::Sizes => sizes_grid(&config, &args.c_values, &args.np_values),
            };
            let rows = ablation_sweep(&config, &grid)?;
            print!("{}", format_rows(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
