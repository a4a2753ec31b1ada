use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use promptforge::agents::BASELINE_INSTRUCTION;
use promptforge::bandit_sim::{simulate, simulate_uniform, spaced_probabilities};
use promptforge::config::{ConfigError, FileConfig, Overrides};
use promptforge::optimizer::{evaluate_baselines, run_optimization, Mode, OptimizerError};
use promptforge::report::{build_report, ReportError};
use promptforge::runlog::{load_run_log, LogError, RecordBody, RunLogWriter, LOG_FILE_NAME};
use promptforge::selector::{SelectorConfig, Strategy};
use promptforge::{ExitStatus, EXIT_CONFIG, EXIT_FAILURE, EXIT_PARSE};

#[derive(Parser)]
#[command(
    name = "promptforge",
    version,
    about = "Bandit-driven instruction optimization for prompt refinement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimization loop and write a run directory.
    Optimize(OptimizeArgs),
    /// Score the baseline instruction, professional prompts and an optimized instruction.
    Baseline(BaselineArgs),
    /// Rebuild tables from a run directory.
    Report(ReportArgs),
    /// Bernoulli bandit simulation of a selection strategy.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    n_new_instructions: Option<usize>,
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    exploration_c: Option<f64>,
    #[arg(long)]
    query_pool: Option<PathBuf>,
    #[arg(long)]
    init_instruction: Option<String>,
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    run: RunFlags,
    /// File holding the optimized instruction to compare.
    #[arg(long)]
    instruction_file: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    bandit_arms: usize,
    #[arg(long)]
    rounds: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Ucb)]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    exploration_c: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sim,
    Live,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Ucb,
    Greedy,
    #[value(name = "epsilon_greedy", alias = "epsilon-greedy")]
    EpsilonGreedy,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Ucb => Strategy::Ucb,
            StrategyArg::Greedy => Strategy::Greedy,
            StrategyArg::EpsilonGreedy => Strategy::EpsilonGreedy,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

/// Error plus the exit code it maps to.
struct Failure {
    code: i32,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

macro_rules! classified {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure { code: e.exit_code(), message: e.to_string() }
            }
        }
    )*};
}
classified!(ConfigError, OptimizerError, LogError);

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        Failure {
            code: EXIT_PARSE,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_FAILURE,
        message: format!("{}: {e}", path.display()),
    }
}

fn load_config(flags: &RunFlags) -> Result<FileConfig, Failure> {
    let mut config = FileConfig::load(&flags.config)?;
    config.apply(&Overrides {
        mode: flags.mode.map(|m| match m {
            ModeArg::Sim => Mode::Sim,
            ModeArg::Live => Mode::Live,
        }),
        seed: flags.seed,
        iterations: flags.iterations,
        batch_size: flags.batch_size,
        strategy: flags.strategy.map(Strategy::from),
        n_new_instructions: flags.n_new_instructions,
        capacity: flags.capacity,
        epsilon: flags.epsilon,
        exploration_c: flags.exploration_c,
        query_pool: flags.query_pool.clone(),
        init_instruction: flags.init_instruction.clone(),
        concurrency: flags.concurrency,
    });
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn optimize(args: OptimizeArgs) -> Result<(), Failure> {
    let file = load_config(&args.run)?;
    let config = file.run_config()?;
    let services = file.services(config.mode)?;
    create_dir(&args.out)?;
    let mut log = RunLogWriter::open_in_dir(&args.out)?;
    let (records, state) = run_optimization(&config, &services, Some(&mut log))?;

    let best = state
        .best_instruction()
        .map(|i| i.text.clone())
        .unwrap_or_else(|| config.init_instruction.clone());
    let best_path = args.out.join("best_instruction.txt");
    fs::write(&best_path, format!("{best}\n")).map_err(|e| io_failure(&best_path, e))?;
    let snapshot = args.out.join("config.toml");
    let resolved = file.to_toml_string()?;
    fs::write(&snapshot, resolved).map_err(|e| io_failure(&snapshot, e))?;

    if let (Some(first), Some(last)) = (records.first(), records.last()) {
        let score = |r: &promptforge::optimizer::IterationRecord| {
            r.best_mean().map_or(f64::NAN, |s| s.value())
        };
        println!(
            "{} iterations, best mean {:.2} -> {:.2}, best so far {:.2}",
            records.len(),
            score(first),
            score(last),
            last.best_so_far.value()
        );
    }
    println!("best instruction: {best}");
    println!("run log: {}", log.path().display());
    Ok(())
}

fn baseline(args: BaselineArgs) -> Result<(), Failure> {
    let file = load_config(&args.run)?;
    let config = file.run_config()?;
    let services = file.services(config.mode)?;
    let optimized = fs::read_to_string(&args.instruction_file).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("{}: {e}", args.instruction_file.display()),
    })?;
    let optimized = optimized.trim();
    if optimized.is_empty() {
        return Err(Failure {
            code: EXIT_CONFIG,
            message: format!(
                "{}: instruction file is empty",
                args.instruction_file.display()
            ),
        });
    }
    let comparison = evaluate_baselines(&config, &services, BASELINE_INSTRUCTION, optimized)?;
    create_dir(&args.out)?;
    let mut log = RunLogWriter::open_in_dir(&args.out)?;
    for event in comparison.events.iter().cloned() {
        log.append_body(event)?;
    }
    for row in &comparison.rows {
        log.append_body(RecordBody::BaselineSummary(row.clone()))?;
    }
    println!("{} queries", comparison.queries.len());
    for row in &comparison.rows {
        let mean = row
            .mean
            .map_or_else(|| "n/a".to_string(), |m| format!("{:.2}", m.value()));
        println!(
            "{:<22}  {:>7}  ({} scored)",
            row.system.label(),
            mean,
            row.items.len()
        );
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let path = if args.run.is_dir() {
        args.run.join(LOG_FILE_NAME)
    } else {
        args.run.clone()
    };
    if !path.exists() {
        return Err(Failure {
            code: EXIT_CONFIG,
            message: format!("{}: no run log", path.display()),
        });
    }
    let records = load_run_log(&path)?;
    let report = build_report(&records)?;
    match args.format {
        Format::Text => print!("{}", report.render_text()),
        Format::Csv => print!("{}", report.render_csv()),
    }
    Ok(())
}

fn simulate_cmd(args: SimulateArgs) -> Result<(), Failure> {
    let config_error = |message: String| Failure {
        code: EXIT_CONFIG,
        message,
    };
    if args.bandit_arms < 2 {
        return Err(config_error("--bandit-arms must be at least 2".into()));
    }
    let mut config = SelectorConfig::with_strategy(args.strategy.into());
    if let Some(e) = args.epsilon {
        config.epsilon = e;
    }
    if let Some(c) = args.exploration_c {
        config.exploration_c = c;
    }
    config.capacity = args.bandit_arms;
    config.rng_seed = args.seed;
    config.validate().map_err(|e| config_error(e.to_string()))?;

    let probabilities = spaced_probabilities(args.bandit_arms);
    let outcome =
        simulate(&probabilities, &config, args.rounds, args.seed).map_err(|e| Failure {
            code: EXIT_FAILURE,
            message: e.to_string(),
        })?;
    let uniform = simulate_uniform(&probabilities, args.rounds, args.seed);
    println!("arms: {probabilities:?}");
    println!("strategy: {}", config.strategy.as_str());
    println!("pulls: {:?}", outcome.pulls);
    println!("best arm fraction: {:.4}", outcome.best_arm_fraction());
    println!("cumulative regret: {:.2}", outcome.final_regret());
    println!("uniform regret: {:.2}", uniform.final_regret());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Optimize(a) => optimize(a),
        Command::Baseline(a) => baseline(a),
        Command::Report(a) => report(a),
        Command::Simulate(a) => simulate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
