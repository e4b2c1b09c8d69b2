use std::path::{Path, PathBuf};
use std::process::ExitCode;

use allocsim::harness::{
    emit_report, generate_instance, generate_kernel, load_episodes, save_episodes, sweep, EpisodeStream,
    GeneratorConfig, ReportFormat,
};
use allocsim::lp::{solve_hindsight_opt, DenseSimplex};
use allocsim::{DualConfig, EpisodeFunctions, Error, LogArgument, Planning, ReferenceFunction, RunConfig, TransitionKernel};
use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "alloc-sim", version, about = "Online resource allocation in episodic MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the allocator on one instance.
    Run(RunArgs),
    /// Sweep episode counts and seeds and write a report.
    Sweep(SweepArgs),
    /// Print the hindsight optimum of an instance and episode file.
    Opt(OptArgs),
    /// Write a generated instance and its episode functions to files.
    Gen(GenArgs),
}

#[derive(Args, Clone)]
struct ShapeArgs {
    #[arg(long = "S", default_value_t = 3)]
    states: usize,
    #[arg(long = "A", default_value_t = 3)]
    actions: usize,
    #[arg(long = "H", default_value_t = 4)]
    horizon: usize,
    /// Dirichlet concentration of generated kernel rows.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefFn {
    Euclid,
    Negent,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogArg {
    Hsat,
    Hs2at,
}

#[derive(Args)]
struct RunArgs {
    /// Kernel file; episodes then come from --episodes or are generated.
    #[arg(long, conflicts_with = "gen", required_unless_present = "gen")]
    instance: Option<PathBuf>,
    /// Generate the kernel from --seed.
    #[arg(long)]
    gen: bool,
    #[command(flatten)]
    shape: ShapeArgs,
    /// Episode functions as a JSON list of {"f", "g"}.
    #[arg(long)]
    episodes: Option<PathBuf>,
    #[arg(long = "T", default_value_t = 200)]
    t: usize,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long = "ref-fn", value_enum, default_value = "euclid")]
    ref_fn: RefFn,
    /// `auto` for 1/(rho H sqrt(T)) or a positive number.
    #[arg(long, default_value = "auto")]
    eta: String,
    /// Initial dual variable.
    #[arg(long, default_value_t = 0.0)]
    lambda0: f64,
    /// Keep the dual variable at its initial value.
    #[arg(long)]
    frozen_dual: bool,
    /// Plan with the true kernel instead of confidence sets.
    #[arg(long)]
    exact_kernel: bool,
    #[arg(long = "log-arg", value_enum, default_value = "hsat")]
    log_arg: LogArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the full run record as JSON.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Write each planning LP in CPLEX LP format into this directory.
    #[arg(long = "dump-lp")]
    dump_lp: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON with `generator`, `t_grid` and `seeds`.
    #[arg(long)]
    config: PathBuf,
    /// Report path; `.csv` or `.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    episodes: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    shape: ShapeArgs,
    #[arg(long = "T", default_value_t = 200)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    episodes: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct SweepFile {
    #[serde(default)]
    generator: GeneratorConfig,
    t_grid: Vec<usize>,
    seeds: Vec<u64>,
}

#[derive(Serialize)]
struct RunSummary {
    episodes: usize,
    total_reward: f64,
    total_consumption: f64,
    budget: f64,
    stop_episode: Option<usize>,
    stop_step: Option<usize>,
    final_lambda: f64,
}

fn parse_eta(text: &str) -> anyhow::Result<Option<f64>> {
    if text == "auto" {
        return Ok(None);
    }
    let eta: f64 = text.parse().with_context(|| format!("--eta expects `auto` or a number, got {text:?}"))?;
    anyhow::ensure!(eta > 0.0 && eta.is_finite(), "--eta must be positive, got {eta}");
    Ok(Some(eta))
}

fn generator(shape: &ShapeArgs, t: usize) -> GeneratorConfig {
    GeneratorConfig {
        states: shape.states,
        actions: shape.actions,
        horizon: shape.horizon,
        alpha: shape.alpha,
        episodes: t,
        ..Default::default()
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

fn run_command(args: RunArgs) -> anyhow::Result<()> {
    let dual = DualConfig {
        ref_fn: match args.ref_fn {
            RefFn::Euclid => ReferenceFunction::SquaredEuclidean,
            RefFn::Negent => ReferenceFunction::NegativeEntropy,
        },
        eta: parse_eta(&args.eta)?,
        initial: args.lambda0,
        frozen: args.frozen_dual,
        ..Default::default()
    };
    let config = RunConfig {
        rho: args.rho,
        delta: args.delta,
        episodes: args.t,
        dual,
        planning: if args.exact_kernel { Planning::ExactKernel } else { Planning::Confidence },
        log_argument: match args.log_arg {
            LogArg::Hsat => LogArgument::Hsat,
            LogArg::Hs2at => LogArgument::Hs2at,
        },
        seed: args.seed,
    };
    let kernel = match &args.instance {
        Some(path) => TransitionKernel::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => generate_kernel(&generator(&args.shape, args.t), args.seed)?,
    };
    let episodes: Box<dyn Iterator<Item = EpisodeFunctions>> = match &args.episodes {
        Some(path) => Box::new(load_episodes(path).with_context(|| format!("loading {}", path.display()))?.into_iter()),
        None => Box::new(EpisodeStream::new(kernel.shape(), args.seed)),
    };
    if let Some(dir) = &args.dump_lp {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let record = allocsim::run_with(&kernel, episodes, &config, &DenseSimplex::default(), &mut |t, lp| match &args.dump_lp {
        Some(dir) => lp.dump(dir.join(format!("episode_{t:06}.lp"))),
        None => Ok(()),
    })?;
    if let Some(path) = &args.record {
        write_json(&record, path)?;
    }
    let summary = RunSummary {
        episodes: record.episodes.len(),
        total_reward: record.total_reward,
        total_consumption: record.total_consumption,
        budget: record.initial_budget,
        stop_episode: record.stop.map(|s| s.episode),
        stop_step: record.stop.map(|s| s.step),
        final_lambda: record.final_lambda,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn sweep_command(args: SweepArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let file: SweepFile = serde_json::from_str(&text).map_err(Error::from)?;
    let format = ReportFormat::from_path(&args.out)?;
    let report = sweep(&file.generator, &file.t_grid, &file.seeds)?;
    emit_report(&report, format, &args.out)?;
    for agg in &report.aggregates {
        println!(
            "T={} runs={} failures={} mean_regret={:.6} stderr={:.6} regret_per_episode={:.6}",
            agg.episodes, agg.runs, agg.failures, agg.mean_regret, agg.stderr_regret, agg.mean_regret_per_episode
        );
    }
    if report.rows.iter().any(|r| r.status.contains("LP solve")) {
        return Err(Error::Solver { status: allocsim::lp::LpStatus::NumericalFailure, residual: f64::NAN }.into());
    }
    Ok(())
}

fn opt_command(args: OptArgs) -> anyhow::Result<()> {
    let kernel = TransitionKernel::load(&args.instance).with_context(|| format!("loading {}", args.instance.display()))?;
    let episodes = load_episodes(&args.episodes).with_context(|| format!("loading {}", args.episodes.display()))?;
    let opt = solve_hindsight_opt(&kernel, &episodes, args.rho)?;
    println!(
        "{}",
        serde_json::json!({
            "opt": opt.value,
            "consumption": opt.consumption,
            "multiplier": opt.multiplier,
            "duality_gap": opt.duality_gap,
            "episodes": episodes.len(),
        })
    );
    Ok(())
}

fn gen_command(args: GenArgs) -> anyhow::Result<()> {
    let (kernel, episodes) = generate_instance(&generator(&args.shape, args.t), args.seed)?;
    kernel.save(&args.instance)?;
    save_episodes(&episodes, &args.episodes)?;
    Ok(())
}

fn is_solver_failure(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| match cause.downcast_ref::<Error>() {
        Some(Error::Solver { .. }) => true,
        Some(Error::Aborted { source, .. }) => matches!(**source, Error::Solver { .. }),
        _ => false,
    })
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(text) = std::env::var("ALLOC_SIM_THREADS") {
        let threads: usize = text.parse().with_context(|| format!("ALLOC_SIM_THREADS must be a count, got {text:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Run(args) => run_command(args),
        Command::Sweep(args) => sweep_command(args),
        Command::Opt(args) => opt_command(args),
        Command::Gen(args) => gen_command(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_solver_failure(&err) { EXIT_SOLVER } else { EXIT_CONFIG })
        }
    }
}
