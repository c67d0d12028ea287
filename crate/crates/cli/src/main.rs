//! `robust-miso`: run precoder design experiments and the acceptance suite.
//!
//! Exit codes: 0 success, 1 failed check or I/O error, 2 configuration error,
//! 3 infeasible problem, 4 numerical failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robust_miso::acceptance::{run_all, MOMENT_SAMPLES};
use robust_miso::experiment::{run, PointStatus, RunSummary};
use robust_miso::{ClarabelBackend, Error, ExperimentSpec, Mode};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "robust-miso",
    version,
    about = "Robust MU-MISO precoder design under imperfect CSIT"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize transmit power subject to a common AMMSE target.
    PowerMin(RunArgs),
    /// Minimize the worst-user AMMSE under a power budget.
    AmmseMin(RunArgs),
    /// Worst-user AMMSE minimization with the ignorant AMMSE model.
    Ignorant(RunArgs),
    /// Round-trip AMMSE targets through the power and max-AMMSE problems.
    DualityCheck(RunArgs),
    /// Compare closed-form quartic Gaussian moments with Monte Carlo.
    MomentCheck(RunArgs),
    /// Run the acceptance suite.
    Accept(AcceptArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment spec (JSON). Command-line options override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Seed of the Monte-Carlo draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte-Carlo sample count.
    #[arg(long)]
    mc: Option<usize>,
    /// Targets: AMMSE levels, or power budgets for the max-AMMSE commands.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    targets: Option<Vec<f64>>,
    /// Interpret power targets as SNR in dB.
    #[arg(long)]
    db: bool,
}

#[derive(Args)]
struct AcceptArgs {
    /// Also write the report to `<out>/acceptance.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_spec(mode: Mode) -> ExperimentSpec {
    match mode {
        Mode::PowerMin | Mode::DualityCheck => ExperimentSpec::new(mode, vec![0.25, 0.4]),
        Mode::AmmseMin | Mode::AmmseMinIgnorant => {
            let mut spec = ExperimentSpec::new(mode, vec![0.0, 10.0, 20.0, 30.0]);
            spec.targets_in_db = true;
            spec
        }
        Mode::MomentCheck => {
            let mut spec = ExperimentSpec::new(mode, vec![]);
            spec.mc_count = MOMENT_SAMPLES;
            spec
        }
    }
}

fn build_spec(mode: Mode, args: &RunArgs) -> Result<ExperimentSpec, Error> {
    let mut spec = match &args.spec {
        Some(path) => {
            let mut spec = ExperimentSpec::load(path)?;
            if spec.mode != mode {
                log::warn!("spec mode {:?} replaced by the subcommand's {mode:?}", spec.mode);
                spec.mode = mode;
            }
            spec
        }
        None => default_spec(mode),
    };
    if let Some(seed) = args.seed {
        spec.mc_seed = seed;
    }
    if let Some(out) = &args.out {
        spec.output_dir = out.clone();
    }
    if let Some(mc) = args.mc {
        spec.mc_count = mc;
    }
    if let Some(targets) = &args.targets {
        spec.targets = targets.clone();
        spec.targets_in_db = args.db;
    } else if args.db {
        spec.targets_in_db = true;
    }
    spec.validate()?;
    Ok(spec)
}

fn error_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Dimension { .. } | Error::NotHermitian(_) => EXIT_CONFIG,
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::Numerical(_) => EXIT_NUMERICAL,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => EXIT_FAILURE,
    }
}

fn status_code(status: PointStatus) -> u8 {
    match status {
        PointStatus::Ok => 0,
        PointStatus::CheckFailed => EXIT_FAILURE,
        PointStatus::Infeasible => EXIT_INFEASIBLE,
        PointStatus::NumericalFailure => EXIT_NUMERICAL,
    }
}

fn print_summary(spec: &ExperimentSpec, summary: &RunSummary) {
    println!(
        "{:>10}  {:<17} {:>5} {:>12} {:>10} {:>12} {:>12}  note",
        "target", "status", "iter", "objective", "power", "worst MC", "focus MC"
    );
    for r in &summary.rows {
        println!(
            "{:>10}  {:<17} {:>5} {:>12.6} {:>10.4} {:>12.5} {:>12.5}  {}",
            r.target,
            format!("{:?}", r.status),
            r.iterations,
            r.final_objective,
            r.power,
            r.worst_mc_ammse,
            r.focus_mc_ammse,
            r.message
        );
    }
    println!("wrote {} files to {}", summary.files.len(), spec.output_dir.display());
}

fn run_experiment(mode: Mode, args: &RunArgs) -> u8 {
    let spec = match build_spec(mode, args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return error_code(&e);
        }
    };
    match run(&spec, &ClarabelBackend) {
        Ok(summary) => {
            print_summary(&spec, &summary);
            status_code(summary.worst_status())
        }
        Err(e) => {
            eprintln!("error: {e}");
            error_code(&e)
        }
    }
}

fn run_accept(args: &AcceptArgs) -> u8 {
    let mut lines = Vec::new();
    let results = run_all(&ClarabelBackend, |r| {
        let line = r.line();
        println!("{line}");
        lines.push(line);
    });
    let hard = results.iter().filter(|r| r.is_hard_failure()).count();
    let footer = format!("acceptance: {} criteria, {hard} failed", results.len());
    println!("{footer}");
    if let Some(dir) = &args.out {
        lines.push(footer);
        let written =
            fs::create_dir_all(dir).and_then(|()| fs::write(dir.join("acceptance.txt"), lines.join("\n") + "\n"));
        if let Err(e) = written {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    }
    if hard == 0 {
        0
    } else {
        EXIT_FAILURE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::PowerMin(a) => run_experiment(Mode::PowerMin, a),
        Command::AmmseMin(a) => run_experiment(Mode::AmmseMin, a),
        Command::Ignorant(a) => run_experiment(Mode::AmmseMinIgnorant, a),
        Command::DualityCheck(a) => run_experiment(Mode::DualityCheck, a),
        Command::MomentCheck(a) => run_experiment(Mode::MomentCheck, a),
        Command::Accept(a) => run_accept(a),
    };
    ExitCode::from(code)
}
