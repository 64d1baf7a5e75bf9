use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lsbe::exact::MuMethod;
use lsbe::problem::Theta;
use lsbe::verify::VerifyConfig;
use lsbe_cli::commands::{cmd_estimate, cmd_solve, cmd_verify, EstimateArgs, SketchArgs, SketchChoice, SolveArgs, VerifyArgs};
use lsbe_cli::CliError;

#[derive(Parser)]
#[command(name = "lsbe", version, about = "Backward error of least-squares solutions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact μ and all estimates for a given approximate solution.
    Estimate(EstimateCmd),
    /// LSMR with per-iteration backward-error estimates, written as CSV.
    Solve(SolveCmd),
    /// Run the built-in verification suite.
    Verify(VerifyCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodFlag {
    Eig,
    SigmaMin,
    FixedPoint,
    Gevp,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum SketchFlag {
    Gaussian,
    SparseSign,
    Identity,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct SketchOpts {
    #[arg(long, value_enum, default_value = "gaussian")]
    sketch: SketchFlag,
    /// Sketch rows as a multiple of the column count.
    #[arg(long, default_value_t = lsbe::sketch::DEFAULT_ROWS_FACTOR)]
    sketch_rows_factor: f64,
}

#[derive(Args)]
struct EstimateCmd {
    matrix: PathBuf,
    x: PathBuf,
    b: PathBuf,
    #[arg(long, default_value = "inf")]
    theta: Theta,
    #[arg(long, value_enum, default_value = "eig")]
    method: MethodFlag,
    #[command(flatten)]
    sketch: SketchOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    refine_steps: usize,
    /// Write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveCmd {
    matrix: PathBuf,
    /// Right-hand side; drawn from the seed when absent.
    #[arg(long)]
    rhs: Option<PathBuf>,
    #[arg(long, default_value = "inf")]
    theta: Theta,
    #[command(flatten)]
    sketch: SketchOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-12)]
    atol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1)]
    estimate_every: usize,
    #[arg(long, default_value_t = 1e-12)]
    recycle_threshold: f64,
    #[arg(long, default_value_t = 1)]
    refine_steps: usize,
    #[arg(long, value_enum, default_value = "off")]
    true_mu: OnOff,
    /// Trace CSV path; the manifest goes next to it. Stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyCmd {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trials per criterion instead of the defaults.
    #[arg(long)]
    trials: Option<usize>,
    /// Deliberately break one check to exercise the reporting.
    #[arg(long)]
    inject_failure: bool,
    /// GL7d12 MatrixMarket file for criterion 9.
    #[arg(long)]
    gl7d12: Option<PathBuf>,
    /// Write the results as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn sketch_args(o: &SketchOpts, seed: u64) -> SketchArgs {
    let kind = match o.sketch {
        SketchFlag::Gaussian => SketchChoice::Gaussian,
        SketchFlag::SparseSign => SketchChoice::SparseSign,
        SketchFlag::Identity => SketchChoice::Identity,
    };
    SketchArgs { kind, rows_factor: o.sketch_rows_factor, seed }
}

fn write_json(path: &PathBuf, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Estimate(c) => {
            let method = match c.method {
                MethodFlag::Eig => Some(MuMethod::Eig),
                MethodFlag::SigmaMin => Some(MuMethod::SigmaMin),
                MethodFlag::FixedPoint => Some(MuMethod::FixedPoint),
                MethodFlag::Gevp => Some(MuMethod::Gevp),
                MethodFlag::All => None,
            };
            let args = EstimateArgs {
                matrix: c.matrix,
                x: c.x,
                b: c.b,
                theta: c.theta,
                method,
                sketch: sketch_args(&c.sketch, c.seed),
                refine_steps: c.refine_steps,
                mu_est: 0.0,
            };
            let report = cmd_estimate(&args)?;
            print!("{}", report.to_text());
            if let Some(p) = &c.out {
                write_json(p, &report)?;
            }
            Ok(true)
        }
        Command::Solve(c) => {
            let args = SolveArgs {
                matrix: c.matrix,
                rhs: c.rhs,
                theta: c.theta,
                sketch: sketch_args(&c.sketch, c.seed),
                seed: c.seed,
                atol: c.atol,
                max_iters: c.max_iters,
                estimate_every: c.estimate_every,
                recycle_threshold: c.recycle_threshold,
                refine_steps: c.refine_steps,
                true_mu: matches!(c.true_mu, OnOff::On),
                out: c.out,
            };
            let out = cmd_solve(&args)?;
            if let Some(n) = &out.notice {
                eprintln!("{n}");
            }
            match &args.out {
                Some(p) => eprintln!("{} iterations ({}); trace written to {}", out.iterations, out.stop_reason.name(), p.display()),
                None => {
                    let mut stdout = std::io::stdout().lock();
                    stdout.write_all(out.csv.as_bytes()).map_err(|e| CliError::Usage(e.to_string()))?;
                }
            }
            Ok(true)
        }
        Command::Verify(c) => {
            let args = VerifyArgs {
                config: VerifyConfig { seed: c.seed, trials: c.trials, inject_failure: c.inject_failure },
                gl7d12: c.gl7d12,
            };
            let outcomes = cmd_verify(&args);
            for o in &outcomes {
                println!("{}", o.line());
            }
            if let Some(p) = &c.out {
                let json: Vec<_> = outcomes.iter().map(|o| o.json()).collect();
                write_json(p, &json)?;
            }
            Ok(outcomes.iter().all(|o| o.passed()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
