//! Command implementations behind the `gridcert` binary.
//!
//! Each command returns a serializable report; the binary only parses
//! arguments, prints, and maps [`CliError`] to the exit-code contract
//! (0 ok, 2 parse, 3 singular, 4 divergence).

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::certifier::{self, CertError, Certificate, Method, DEFAULT_DELTA_PROBE};
use crate::netmodel::{parse_case, GridCase, Mode, NetError};
use crate::powerflow::{self, PowerFlowError, ResidualModel, SolveTrace, SolverConfig, Variant};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_SINGULAR: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

/// Environment variable selecting the number of decimals in JSON reports.
pub const PRECISION_ENV: &str = "GRIDCERT_PRECISION";
pub const DEFAULT_PRECISION: usize = 6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Usage(_) => EXIT_PARSE,
            CliError::Net(e) if e.is_singular() => EXIT_SINGULAR,
            CliError::Net(_) => EXIT_PARSE,
            CliError::Cert(e) if e.is_singular() => EXIT_SINGULAR,
            CliError::Cert(_) => EXIT_PARSE,
            CliError::PowerFlow(e) if e.is_singular() => EXIT_SINGULAR,
            CliError::PowerFlow(PowerFlowError::Diverged { .. } | PowerFlowError::MaxIterations { .. }) => {
                EXIT_DIVERGENCE
            }
            CliError::PowerFlow(_) => EXIT_PARSE,
        }
    }
}

/// Options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Overrides the case file's `#mode`.
    pub mode: Option<Mode>,
    pub method: Method,
    pub tol: f64,
    pub max_iter: usize,
    pub delta_probe: f64,
    /// Multiplier applied to every injected power.
    pub scale: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        let solver = SolverConfig::default();
        Self {
            mode: None,
            method: Method::Newton,
            tol: solver.tol,
            max_iter: solver.max_iter,
            delta_probe: DEFAULT_DELTA_PROBE,
            scale: 1.0,
        }
    }
}

impl RunOptions {
    fn solver(&self, method: Method) -> SolverConfig {
        SolverConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            variant: match method {
                Method::Newton => Variant::Newton,
                Method::Approx => Variant::ApproxNewton,
            },
            v0: None,
        }
    }
}

pub fn load_case(path: &Path) -> Result<GridCase, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_case(&text)?)
}

fn prepare(case: &GridCase, opts: &RunOptions, mode: Mode) -> Result<GridCase, CliError> {
    let case = if case.mode() == mode { case.clone() } else { case.with_mode(mode)? };
    Ok(if opts.scale == 1.0 { case } else { case.with_power_scale(opts.scale) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub source: String,
    pub nodes: usize,
    pub branches: usize,
    pub master: Option<String>,
    pub v_master: f64,
    pub max_abs_power: f64,
    pub power_scale: f64,
}

impl CaseMeta {
    fn new(source: &str, case: &GridCase, opts: &RunOptions) -> Self {
        Self {
            source: source.to_string(),
            nodes: case.nodes().len(),
            branches: case.branches().len(),
            master: case.master().map(|n| n.id.clone()),
            v_master: case.v_master(),
            max_abs_power: case.max_abs_power() * opts.scale.abs(),
            power_scale: opts.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeVoltage {
    pub node: String,
    pub voltage: f64,
}

/// Observed outcome of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub converged: bool,
    pub status: String,
    pub iterations: usize,
    pub final_residual: Option<f64>,
    pub min_voltage: Option<f64>,
    pub residuals: Vec<f64>,
    pub voltages: Vec<NodeVoltage>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub mode: Mode,
    pub method: Method,
    pub certificate: Option<Certificate>,
    pub certificate_error: Option<String>,
    pub solve: Option<SolveSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub case: CaseMeta,
    pub entries: Vec<RunEntry>,
    pub elapsed_ms: f64,
}

/// Solve outcome together with the trace the summary was built from.
struct Solved {
    summary: SolveSummary,
    trace: Option<SolveTrace>,
    error: Option<PowerFlowError>,
}

fn run_solve(model: &ResidualModel, cfg: &SolverConfig) -> Solved {
    let labels = &model.net().index_map;
    match powerflow::solve(model, cfg) {
        Ok(res) => Solved {
            summary: SolveSummary {
                converged: true,
                status: "converged".into(),
                iterations: res.trace.iterations,
                final_residual: res.trace.final_residual(),
                min_voltage: Some(res.min_voltage),
                residuals: res.trace.residuals(),
                voltages: labels
                    .iter()
                    .zip(res.voltages.iter())
                    .map(|(node, &voltage)| NodeVoltage {
                        node: node.clone(),
                        voltage,
                    })
                    .collect(),
                error: None,
            },
            trace: Some(res.trace),
            error: None,
        },
        Err(e) => {
            let trace = e.trace().cloned();
            let status = match &e {
                PowerFlowError::Diverged { .. } => "diverged",
                PowerFlowError::MaxIterations { .. } => "max_iterations",
                PowerFlowError::SingularJacobian { .. } => "singular_jacobian",
                _ => "error",
            };
            Solved {
                summary: SolveSummary {
                    converged: false,
                    status: status.into(),
                    iterations: trace.as_ref().map_or(0, |t| t.iterations),
                    final_residual: trace.as_ref().and_then(SolveTrace::final_residual),
                    min_voltage: trace.as_ref().and_then(|t| t.records.last()).map(|r| r.v.min()),
                    residuals: trace.as_ref().map(SolveTrace::residuals).unwrap_or_default(),
                    voltages: Vec::new(),
                    error: Some(e.to_string()),
                },
                trace,
                error: Some(e),
            }
        }
    }
}

fn certificate_for(model: &ResidualModel, method: Method, delta_probe: f64) -> Result<Certificate, CertError> {
    let c = certifier::constants(model)?;
    Ok(certifier::certify(&c, method, delta_probe))
}

fn mode_of(case: &GridCase, opts: &RunOptions) -> Mode {
    opts.mode.unwrap_or(case.mode())
}

/// Certificate only, no iteration.
pub fn cmd_certify(case: &GridCase, source: &str, opts: &RunOptions) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let mode = mode_of(case, opts);
    let model = ResidualModel::from_case(&prepare(case, opts, mode)?)?;
    let cert = certificate_for(&model, opts.method, opts.delta_probe)?;
    Ok(RunReport {
        case: CaseMeta::new(source, case, opts),
        entries: vec![RunEntry {
            mode,
            method: opts.method,
            certificate: Some(cert),
            certificate_error: None,
            solve: None,
        }],
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Result of [`cmd_solve`]: the report is always produced, `failure` carries
/// the solver error that decides the exit code.
pub struct SolveOutcome {
    pub report: RunReport,
    pub trace: Option<SolveTrace>,
    pub failure: Option<CliError>,
}

/// Certificate plus the selected solver.
pub fn cmd_solve(case: &GridCase, source: &str, opts: &RunOptions) -> Result<SolveOutcome, CliError> {
    let start = Instant::now();
    let mode = mode_of(case, opts);
    let model = ResidualModel::from_case(&prepare(case, opts, mode)?)?;
    let (certificate, certificate_error) = match certificate_for(&model, opts.method, opts.delta_probe) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let solved = run_solve(&model, &opts.solver(opts.method));
    Ok(SolveOutcome {
        report: RunReport {
            case: CaseMeta::new(source, case, opts),
            entries: vec![RunEntry {
                mode,
                method: opts.method,
                certificate,
                certificate_error,
                solve: Some(solved.summary),
            }],
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        },
        trace: solved.trace,
        failure: solved.error.map(CliError::from),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxPowerReport {
    pub rho: f64,
    pub mu: f64,
    pub alpha_max: f64,
    pub load_norm: f64,
    pub guaranteed: bool,
    pub status: String,
}

/// Loadability bound of the master-slave Newton certificate.
pub fn cmd_maxpower(case: &GridCase, opts: &RunOptions) -> Result<MaxPowerReport, CliError> {
    let model = ResidualModel::from_case(&prepare(case, opts, Mode::MasterSlave)?)?;
    let c = certifier::constants(&model)?;
    let (rho, mu) = (c.rho.expect("master-slave"), c.mu.expect("master-slave"));
    let alpha_max = certifier::max_power_master(rho, mu)?;
    let guaranteed = c.alpha <= alpha_max;
    Ok(MaxPowerReport {
        rho,
        mu,
        alpha_max,
        load_norm: c.alpha,
        guaranteed,
        status: if guaranteed {
            "guaranteed".into()
        } else {
            "not guaranteed by the loadability bound".into()
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scale: f64,
    pub verdict: String,
    pub converged: bool,
    pub iters: usize,
    pub final_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub mode: Mode,
    pub method: Method,
    pub base_load_norm: f64,
    /// Loadability bound (master-slave only), in load-norm units.
    pub alpha_max: Option<f64>,
    /// `alpha_max / base_load_norm`: the scale where the Newton verdict flips.
    pub alpha_max_scale: Option<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// `scale,verdict,converged,iters,final_residual`, rows ordered by scale.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scale", "verdict", "converged", "iters", "final_residual"])?;
        for r in &self.rows {
            w.write_record([
                format!("{}", r.scale),
                r.verdict.clone(),
                r.converged.to_string(),
                r.iters.to_string(),
                r.final_residual.map(|x| format!("{x:e}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Certifies and solves the case at `steps` evenly spaced load scales.
/// Rows run in parallel; a failing row is recorded and the sweep continues.
pub fn cmd_sweep(
    case: &GridCase,
    opts: &RunOptions,
    scale_min: f64,
    scale_max: f64,
    steps: usize,
) -> Result<SweepResult, CliError> {
    if !(scale_min < scale_max) || steps < 2 {
        return Err(CliError::Usage(format!(
            "sweep needs scale_min < scale_max and steps >= 2 (got {scale_min}, {scale_max}, {steps})"
        )));
    }
    let mode = mode_of(case, opts);
    let base = ResidualModel::from_case(&prepare(case, &RunOptions { scale: 1.0, ..opts.clone() }, mode)?)?;
    let base_constants = certifier::constants(&base)?;
    let alpha_max = match mode {
        Mode::MasterSlave => {
            certifier::max_power_master(base_constants.rho.expect("master-slave"), base_constants.mu.expect("master-slave"))
                .ok()
        }
        Mode::Island => None,
    };
    let base_load_norm = sup_norm_or_zero(base.power());
    let cfg = opts.solver(opts.method);
    let rows = (0..steps)
        .into_par_iter()
        .map(|k| {
            let scale = scale_min + (scale_max - scale_min) * k as f64 / (steps - 1) as f64;
            let model = base.with_power_scale(scale);
            let verdict = match certificate_for(&model, opts.method, opts.delta_probe) {
                Ok(c) => c.verdict.to_string(),
                Err(_) => "error".to_string(),
            };
            let solved = run_solve(&model, &cfg);
            SweepRow {
                scale,
                verdict,
                converged: solved.summary.converged,
                iters: solved.summary.iterations,
                final_residual: solved.summary.final_residual,
            }
        })
        .collect();
    Ok(SweepResult {
        mode,
        method: opts.method,
        base_load_norm,
        alpha_max,
        alpha_max_scale: alpha_max.filter(|_| base_load_norm > 0.0).map(|a| a / base_load_norm),
        rows,
    })
}

fn sup_norm_or_zero(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// All four (mode × method) combinations: certificate and observed solve.
///
/// Island entries need droop terminals or a master to eliminate; when the
/// island model cannot be built its entries carry the error instead.
pub fn cmd_report(case: &GridCase, source: &str, opts: &RunOptions) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let mut entries = Vec::new();
    for mode in [Mode::MasterSlave, Mode::Island] {
        let model = prepare(case, opts, mode).map_err(|e| e.to_string()).and_then(|c| {
            ResidualModel::from_case(&c).map_err(|e| e.to_string())
        });
        for method in [Method::Newton, Method::Approx] {
            let entry = match &model {
                Ok(model) => {
                    let (certificate, certificate_error) = match certificate_for(model, method, opts.delta_probe) {
                        Ok(c) => (Some(c), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    RunEntry {
                        mode,
                        method,
                        certificate,
                        certificate_error,
                        solve: Some(run_solve(model, &opts.solver(method)).summary),
                    }
                }
                Err(msg) => RunEntry {
                    mode,
                    method,
                    certificate: None,
                    certificate_error: Some(msg.clone()),
                    solve: None,
                },
            };
            entries.push(entry);
        }
    }
    Ok(RunReport {
        case: CaseMeta::new(source, case, opts),
        entries,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Reads the report precision from the environment.
pub fn precision_from_env() -> usize {
    std::env::var(PRECISION_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_PRECISION)
}

/// Serializes to pretty JSON with every float rounded to `precision`
/// decimals of its scientific mantissa, so tiny residuals keep their
/// magnitude.
pub fn to_json<T: Serialize>(value: &T, precision: usize) -> serde_json::Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_floats(&mut v, precision);
    serde_json::to_string_pretty(&v)
}

fn round_floats(v: &mut Value, precision: usize) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64");
            let rounded: f64 = format!("{x:.precision$e}").parse().expect("formatted float");
            if let Some(num) = serde_json::Number::from_f64(rounded) {
                *n = num;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|x| round_floats(x, precision)),
        Value::Object(map) => map.values_mut().for_each(|x| round_floats(x, precision)),
        _ => {}
    }
}
