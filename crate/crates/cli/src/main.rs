use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use egate_cli::config::{ExperimentConfig, ExperimentKind};
use egate_cli::pipeline::{self, Context, RunOutcome, Stage};
use egate_cli::report::{build_report, write_report};
use egate_cli::{EXIT_CONFIG, EXIT_RUNTIME, THREADS_VAR};

#[derive(Parser)]
#[command(name = "egate", version, about = "Run EGATE-NNVQE experiments from TOML configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train and test grids as CSV.
    GenGrid(ConfigArgs),
    /// Train the graph autoencoder for every seed.
    TrainEgate(ConfigArgs),
    /// Train every configured predictor, reusing stored encoders.
    TrainPredictor(ConfigArgs),
    /// Test-set metrics for every predictor.
    Eval(ConfigArgs),
    /// Krylov error curves from each initial-state provider.
    Skqd(ConfigArgs),
    /// First-step gradient variances and log2 fits.
    Bp(ConfigArgs),
    /// Every stage the config's kind calls for.
    Run(ConfigArgs),
    /// Aggregate seed results into tables and plots.
    Report {
        /// Run or seed directories.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Validate the config and print the plan without running it.
    DryRun(ConfigArgs),
}

fn fail(code: i32, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code as u8)
}

fn load(args: &ConfigArgs) -> Result<Context, ExitCode> {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(|e| fail(EXIT_CONFIG, e))?;
    if let Some(out) = &args.output {
        cfg.output_dir = out.clone();
    }
    Ok(Context::new(cfg))
}

fn require(ctx: &Context, ok: bool, what: &str) -> Result<(), ExitCode> {
    if ok {
        Ok(())
    } else {
        Err(fail(EXIT_CONFIG, format!("{what} cannot run a {:?} config", ctx.cfg.kind)))
    }
}

fn finish(ctx: &Context, outcome: RunOutcome) -> ExitCode {
    for seed in &outcome.completed {
        println!("seed {seed}: ok -> {}", ctx.seed_dir(*seed).display());
    }
    for (seed, err) in &outcome.failed {
        eprintln!("seed {seed}: failed: {err}");
    }
    if outcome.failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_RUNTIME as u8)
    }
}

fn init_threads() -> Result<(), ExitCode> {
    let Ok(v) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| fail(EXIT_CONFIG, format!("{THREADS_VAR} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| fail(EXIT_RUNTIME, e))
}

fn staged(args: &ConfigArgs, stages: &[Stage], what: &str, allowed: fn(ExperimentKind) -> bool) -> Result<ExitCode, ExitCode> {
    let ctx = load(args)?;
    require(&ctx, allowed(ctx.cfg.kind), what)?;
    let outcome = pipeline::run(&ctx, stages).map_err(|e| fail(EXIT_RUNTIME, e))?;
    Ok(finish(&ctx, outcome))
}

fn not_bp(k: ExperimentKind) -> bool {
    k != ExperimentKind::Bp
}

fn dispatch(cmd: Command) -> Result<ExitCode, ExitCode> {
    match cmd {
        Command::GenGrid(a) => {
            let ctx = load(&a)?;
            require(&ctx, not_bp(ctx.cfg.kind), "gen-grid")?;
            let (train, test) = pipeline::write_grids(&ctx).map_err(|e| fail(EXIT_RUNTIME, e))?;
            println!("{train} train and {test} test Hamiltonians -> {}", ctx.cfg.output_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::TrainEgate(a) => staged(&a, &[Stage::Egate], "train-egate", not_bp),
        Command::TrainPredictor(a) => staged(&a, &[Stage::Egate, Stage::Predictors], "train-predictor", not_bp),
        Command::Eval(a) => staged(&a, &[Stage::Egate, Stage::Predictors, Stage::Eval], "eval", not_bp),
        Command::Skqd(a) => staged(&a, &[Stage::Egate, Stage::Predictors, Stage::Skqd], "skqd", |k| k == ExperimentKind::Skqd),
        Command::Bp(a) => staged(&a, &[Stage::Bp], "bp", |k| k == ExperimentKind::Bp),
        Command::Run(a) => {
            let ctx = load(&a)?;
            let outcome = pipeline::run(&ctx, &Stage::for_kind(ctx.cfg.kind)).map_err(|e| fail(EXIT_RUNTIME, e))?;
            Ok(finish(&ctx, outcome))
        }
        Command::Report { dirs, out } => {
            let (report, hash) = build_report(&dirs).map_err(|e| fail(EXIT_RUNTIME, e))?;
            write_report(&report, &hash, &out).map_err(|e| fail(EXIT_RUNTIME, e))?;
            println!("report for seeds {:?} -> {}", report.seeds, out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::DryRun(a) => {
            let ctx = load(&a)?;
            let plan = ctx.plan(&Stage::for_kind(ctx.cfg.kind)).map_err(|e| fail(EXIT_CONFIG, e))?;
            print!("{plan}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Err(code) = init_threads() {
        return code;
    }
    dispatch(cli.command).unwrap_or_else(|code| code)
}
