use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cbf_hqp::control::Mode;
use cbf_hqp::model::RobotModel;
use cbf_hqp::sim::{audit_log, save_csv, Audit, Scenario, Summary};
use cbf_hqp::sweep::{grid, run_all};

mod check;

const EXIT_FAULT: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "cbf-hqp", version, about = "Hierarchical CBF-QP safety filter: simulation runs and model checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario over a grid of controller modes and barrier gains.
    Run(RunArgs),
    /// Check the dynamics identities of a model at random states.
    Check(CheckArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated modes; defaults to the scenario's mode.
    #[arg(long, value_delimiter = ',')]
    mode: Vec<Mode>,
    /// Comma-separated energy barrier gains (1/s); defaults to the scenario's gain.
    #[arg(long, value_delimiter = ',')]
    gamma: Vec<f64>,
    /// Kinetic-energy bound override (J).
    #[arg(long)]
    kmax: Option<f64>,
    /// Output directory for the CSV logs.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Duration override (s).
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(clap::Args)]
struct CheckArgs {
    /// Model file.
    model: PathBuf,
    /// Number of random states.
    #[arg(long, default_value_t = 50)]
    states: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Tolerances of the post-run audit.
const SKEW_TOL: f64 = 1e-6;
const POWER_TOL: f64 = 1e-3;
const PROJECTOR_TOL: f64 = 1e-8;
const EQUALITY_TOL: f64 = 1e-8;

fn audit_failures(a: &Audit) -> Vec<String> {
    let mut out = Vec::new();
    let checks = [
        ("skew-symmetry", a.skew, SKEW_TOL),
        ("power identity", a.power, POWER_TOL),
        ("projector idempotence", a.idempotence, PROJECTOR_TOL),
        ("projector consistency", a.consistency, PROJECTOR_TOL),
        ("inherited equality residual", a.eq_residual, EQUALITY_TOL),
    ];
    for (name, value, tol) in checks {
        if value.is_nan() || value > tol {
            out.push(format!("{name} {value:.3e} > {tol:.0e}"));
        }
    }
    out
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let mut base = match Scenario::load(&args.scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(k) = args.kmax {
        base.cbf.k_max = k;
    }
    if let Some(d) = args.duration {
        base.duration = d;
    }
    if let Err(e) = base.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_USAGE);
    }
    let model = match RobotModel::load(&base.model_path) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let modes = if args.mode.is_empty() { vec![base.mode] } else { args.mode };
    let gammas = if args.gamma.is_empty() { vec![base.cbf.gamma] } else { args.gamma };
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return ExitCode::from(EXIT_USAGE);
    }

    let runs = grid(&base, &modes, &gammas);
    let logs = run_all(&model, &runs);
    let mut failed = false;
    println!(
        "{:<36} {:>6} {:>10} {:>12} {:>10} {:>10} {:>10} {:>9}",
        "run", "steps", "max K", "max K-Kmax", "max |dW|", "max |da|", "max delta", "mean us"
    );
    for (scenario, log) in runs.iter().zip(logs) {
        let name = scenario.log_file_name();
        let log = match log {
            Ok(l) => l,
            Err(e) => {
                eprintln!("{name}: {e}");
                failed = true;
                continue;
            }
        };
        let path = args.out.join(&name);
        if let Err(e) = save_csv(&log, &path) {
            eprintln!("{name}: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
        let s = Summary::from_records(&log.records);
        println!(
            "{:<36} {:>6} {:>10.4e} {:>12.4e} {:>10.4e} {:>10.4e} {:>10.4e} {:>9.1}",
            name, s.steps, s.max_k, s.max_k_excess, s.max_wrench_dev, s.max_alpha_dev, s.max_delta, s.mean_solve_us
        );
        if let Some(f) = &log.fault {
            eprintln!("{name}: controller fault at {f}");
            failed = true;
        }
        match audit_log(&model, &log.records) {
            Ok(a) => {
                for msg in audit_failures(&a) {
                    eprintln!("{name}: audit failed: {msg}");
                    failed = true;
                }
            }
            Err(e) => {
                eprintln!("{name}: audit error: {e}");
                failed = true;
            }
        }
    }
    if failed { ExitCode::from(EXIT_FAULT) } else { ExitCode::SUCCESS }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Check(args) => check::cmd_check(&args.model, args.states, args.seed),
    }
}
