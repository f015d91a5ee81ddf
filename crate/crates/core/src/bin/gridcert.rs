use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridcert::cli::{self, CliError, RunOptions};
use gridcert::{Method, Mode};

#[derive(Parser)]
#[command(name = "gridcert", version, about = "Convergence certificates and power flow for DC microgrids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the convergence certificate without iterating.
    Certify(Common),
    /// Certify, then run the selected solver.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Write the per-iteration residual trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Maximum load norm admitted by the master-slave Newton certificate.
    Maxpower(Common),
    /// Certify and solve over a range of load scales; CSV on stdout.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.5)]
        scale_min: f64,
        #[arg(long, default_value_t = 2.0)]
        scale_max: f64,
        #[arg(long, default_value_t = 16)]
        steps: usize,
    },
    /// Certificates and solves for every mode and method.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Case file (`from,to,r,P,inv_C` with `#` directives).
    case: PathBuf,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, default_value = "newton")]
    method: Method,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    #[arg(long, default_value_t = gridcert::certifier::DEFAULT_DELTA_PROBE)]
    delta_probe: f64,
    /// Multiplier applied to every injected power.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Write the JSON report to this file instead of stdout.
    #[arg(long)]
    json: Option<PathBuf>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            mode: self.mode,
            method: self.method,
            tol: self.tol,
            max_iter: self.max_iter,
            delta_probe: self.delta_probe,
            scale: self.scale,
        }
    }
}

fn emit<T: serde::Serialize>(value: &T, json: Option<&Path>) -> Result<(), CliError> {
    let text = cli::to_json(value, cli::precision_from_env()).map_err(|e| CliError::Usage(e.to_string()))?;
    match json {
        Some(path) => std::fs::write(path, text + "\n").map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        }),
        None => {
            let _ = writeln!(std::io::stdout(), "{text}");
            Ok(())
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Certify(c) => {
            let case = cli::load_case(&c.case)?;
            let report = cli::cmd_certify(&case, &c.case.display().to_string(), &c.options())?;
            emit(&report, c.json.as_deref())
        }
        Command::Solve { common: c, trace } => {
            let case = cli::load_case(&c.case)?;
            let outcome = cli::cmd_solve(&case, &c.case.display().to_string(), &c.options())?;
            if let (Some(path), Some(t)) = (&trace, &outcome.trace) {
                let file = File::create(path).map_err(io_err(path))?;
                t.write_csv(file).map_err(|e| CliError::Usage(e.to_string()))?;
            }
            emit(&outcome.report, c.json.as_deref())?;
            outcome.failure.map_or(Ok(()), Err)
        }
        Command::Maxpower(c) => {
            let case = cli::load_case(&c.case)?;
            emit(&cli::cmd_maxpower(&case, &c.options())?, c.json.as_deref())
        }
        Command::Sweep {
            common: c,
            scale_min,
            scale_max,
            steps,
        } => {
            let case = cli::load_case(&c.case)?;
            let result = cli::cmd_sweep(&case, &c.options(), scale_min, scale_max, steps)?;
            let stdout = std::io::stdout();
            result.write_csv(stdout.lock()).map_err(|e| CliError::Usage(e.to_string()))?;
            if let Some(s) = result.alpha_max_scale {
                eprintln!("alpha_max reached at scale {s:.6}");
            }
            if let Some(path) = c.json.as_deref() {
                emit(&result, Some(path))?;
            }
            Ok(())
        }
        Command::Report(c) => {
            let case = cli::load_case(&c.case)?;
            let report = cli::cmd_report(&case, &c.case.display().to_string(), &c.options())?;
            emit(&report, c.json.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match run(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "gridcert: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
