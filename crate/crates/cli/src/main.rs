use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gaitopt::harness::{self, ExperimentConfig, ExperimentReport, Pipeline};
use gaitopt::mtgp::FidelityTag;
use gaitopt::optimizer::BaselineMethod;
use gaitopt::params::GaitParams;
use gaitopt::plant::Preset;
use gaitopt::Error;

/// Overrides the default output root (`runs`) when `--out` is not given.
const OUT_ROOT_ENV: &str = "GAITOPT_OUT_ROOT";

const EXIT_CONFIG: u8 = 2;
const EXIT_INCOMPLETE: u8 = 3;

#[derive(Parser)]
#[command(name = "gaitopt", version, about = "CPG gait optimization for a soft quadruped")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single gait evaluations.
    #[command(subcommand)]
    Gait(GaitCommand),
    /// Optimization runs.
    #[command(subcommand)]
    Opt(OptCommand),
    /// Plant landscape tools.
    #[command(subcommand)]
    Plant(PlantCommand),
    /// Post-hoc analysis of finished runs.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Subcommand)]
enum GaitCommand {
    /// Simulate one gait and print its evaluation as JSON.
    Simulate(SimulateArgs),
}

#[derive(Subcommand)]
enum OptCommand {
    /// Single-fidelity Bayesian optimization on the low-fidelity plant.
    Bo(RunArgs),
    /// Multi-fidelity optimization warm-started from a low-fidelity run.
    Mfbo {
        #[command(flatten)]
        run: RunArgs,
        /// Run the low-fidelity phase first.
        #[arg(long)]
        run_phase1: bool,
        /// Directory of an earlier `opt bo` run to warm-start from.
        #[arg(long, value_name = "DIR")]
        phase1: Option<PathBuf>,
    },
    /// Model-free baseline on the low-fidelity plant.
    Baseline {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_parser = parse_method)]
        method: BaselineMethod,
    },
}

#[derive(Subcommand)]
enum PlantCommand {
    /// Evaluate quasi-random points on both fidelities.
    Sweep(RunArgs),
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Re-evaluate a multi-fidelity run's high-fidelity points on the low-fidelity plant.
    Gap {
        /// Output directory of an `opt mfbo` run.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Plant preset: default, zero-gap or extreme-gap.
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Evaluation budget (for bo the total including the initial design;
    /// for mfbo the high-fidelity evaluations; for sweeps the point count).
    #[arg(long)]
    budget: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue the run stored in this directory.
    #[arg(long, value_name = "DIR", conflicts_with_all = ["preset", "seeds", "budget", "out", "config"])]
    resume: Option<PathBuf>,
    /// Experiment configuration JSON; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Stop every seed after this many new evaluations.
    #[arg(long, value_name = "N")]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// a_alpha_b,a_z_l,f,alpha,phi
    #[arg(long, value_delimiter = ',', required = true)]
    params: Vec<f64>,
    #[arg(long, value_parser = parse_preset, default_value = "default")]
    preset: Preset,
    /// 1 (simulator) or 2 (hardware stand-in).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    fidelity: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the post-transient foot trajectories to this CSV.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> Result<BaselineMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn default_out(name: &str) -> PathBuf {
    let root = std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(name)
}

fn experiment(pipeline: Pipeline, args: &RunArgs, name: &str) -> gaitopt::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig {
            out: default_out(name),
            ..Default::default()
        },
    };
    cfg.pipeline = pipeline;
    if let Some(p) = args.preset {
        cfg.preset = p;
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    cfg.stop_after = args.stop_after;
    if let Some(b) = args.budget {
        match pipeline {
            Pipeline::Bo => {
                if b <= cfg.bo.n_init {
                    return Err(Error::Config(format!("budget {b} must exceed the initial design of {} points", cfg.bo.n_init)));
                }
                cfg.bo.i_max = b - cfg.bo.n_init;
            }
            Pipeline::Mfbo => cfg.bo.k_max = b,
            Pipeline::Baseline => cfg.baseline.budget = b,
            Pipeline::Sweep => cfg.sweep_points = b,
        }
    }
    Ok(cfg)
}

fn run(pipeline: Pipeline, args: &RunArgs, name: &str, tweak: impl FnOnce(&mut ExperimentConfig)) -> gaitopt::Result<ExperimentReport> {
    if let Some(dir) = &args.resume {
        let report = harness::resume_experiment(dir, args.stop_after)?;
        return Ok(report);
    }
    let mut cfg = experiment(pipeline, args, name)?;
    tweak(&mut cfg);
    harness::run_experiment(&cfg, false)
}

fn print_report(r: &ExperimentReport) {
    print!("{}", r.table());
    println!("artifacts: {}", r.dir.display());
}

fn simulate(a: &SimulateArgs) -> gaitopt::Result<()> {
    let values: [f64; 5] = a.params.as_slice().try_into().map_err(|_| Error::Config(format!("--params needs 5 values, got {}", a.params.len())))?;
    let p = GaitParams::from_array(values);
    p.validate()?;
    let fidelity = FidelityTag::try_from(a.fidelity).map_err(Error::Config)?;
    let eval = harness::simulate_gait(&p, a.preset, fidelity, a.seed, a.trace.as_deref())?;
    println!("{}", serde_json::to_string_pretty(&eval)?);
    Ok(())
}

fn gap(dir: &Path) -> gaitopt::Result<()> {
    let seeds = harness::analyze_gap(dir)?;
    println!("{:>6} {:>8} {:>10} {:>6}", "seed", "rho", "kf corr", "pairs");
    for s in &seeds {
        let kf = s.report.kf_correlation.map_or("-".to_string(), |k| format!("{k:.3}"));
        println!("{:>6} {:>8.3} {:>10} {:>6}", s.seed, s.report.rho, kf, s.report.pairs.len());
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::MissingWarmStart | Error::InvalidParams(_) | Error::FormatVersion { .. } | Error::Json(_) => EXIT_CONFIG,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Gait(GaitCommand::Simulate(a)) => simulate(a).map(|_| None),
        Command::Opt(OptCommand::Bo(a)) => run(Pipeline::Bo, a, "bo", |_| {}).map(Some),
        Command::Opt(OptCommand::Mfbo { run: a, run_phase1, phase1 }) => run(Pipeline::Mfbo, a, "mfbo", |c| {
            c.run_phase1 |= *run_phase1;
            if phase1.is_some() {
                c.phase1 = phase1.clone();
            }
        })
        .map(Some),
        Command::Opt(OptCommand::Baseline { run: a, method }) => {
            let name = format!("baseline-{}", method.method());
            run(Pipeline::Baseline, a, &name, |c| {
                c.method = *method;
                if *method == BaselineMethod::Ags && a.budget.is_none() {
                    c.baseline.budget = c.baseline.ags.budget();
                }
            })
            .map(Some)
        }
        Command::Plant(PlantCommand::Sweep(a)) => run(Pipeline::Sweep, a, "sweep", |_| {}).map(Some),
        Command::Analyze(AnalyzeCommand::Gap { dir }) => gap(dir).map(|_| None),
    };
    match result {
        Ok(Some(report)) => {
            print_report(&report);
            if report.complete() {
                ExitCode::SUCCESS
            } else {
                eprintln!("run incomplete; continue with --resume {}", report.dir.display());
                ExitCode::from(EXIT_INCOMPLETE)
            }
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
