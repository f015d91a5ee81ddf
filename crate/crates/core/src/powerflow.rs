//! Residual maps, Jacobians and the two Newton iterations.
//!
//! Master-slave operation solves
//!
//! ```text
//! F(v) = diag(v)⁻¹ P − Y_pv v_v − Y_pp v = 0
//! ```
//!
//! and island operation with droop controls solves
//!
//! ```text
//! F(v) = diag(v)⁻¹ (P − C (v − v_n)) − Y_s v = 0
//! ```
//!
//! over the constant-power terminals. The full Newton method refactors the
//! Jacobian every step; the approximated method factors the flat-start
//! Jacobian once and iterates `v ← v − Γ₀ F(v)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{reduce, GridCase, Mode, NetError, ReducedNetwork, VoltageReference};
use crate::numerics::{sup_norm, DenseMatrix, DenseVector, LuFactors, NumericsError};

/// Number of consecutive residual increases that counts as divergence.
pub const DIVERGENCE_STREAK: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceReason {
    GrowingResidual,
    NonPositiveVoltage,
    NonFinite,
}

#[derive(Debug, Clone, Error)]
pub enum PowerFlowError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("zero voltage at row {index}")]
    ZeroVoltage { index: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("singular Jacobian at iteration {iteration}: {source}")]
    SingularJacobian {
        iteration: usize,
        source: NumericsError,
        trace: Box<SolveTrace>,
    },
    #[error("iteration diverged ({reason:?}) after {} iterations", trace.iterations)]
    Diverged {
        reason: DivergenceReason,
        trace: Box<SolveTrace>,
    },
    #[error("no convergence within {} iterations", trace.iterations)]
    MaxIterations { trace: Box<SolveTrace> },
}

impl PowerFlowError {
    /// Partial trace of a failed solve, when the failure happened mid-iteration.
    pub fn trace(&self) -> Option<&SolveTrace> {
        match self {
            PowerFlowError::SingularJacobian { trace, .. }
            | PowerFlowError::Diverged { trace, .. }
            | PowerFlowError::MaxIterations { trace } => Some(trace),
            _ => None,
        }
    }

    pub fn is_singular(&self) -> bool {
        match self {
            PowerFlowError::SingularJacobian { .. } => true,
            PowerFlowError::Net(e) => e.is_singular(),
            _ => false,
        }
    }
}

/// Everything needed to evaluate `F` and `DF` for one operating mode.
#[derive(Debug, Clone)]
pub struct ResidualModel {
    mode: Mode,
    net: ReducedNetwork,
    power: DenseVector,
    droop: DenseVector,
    v_ref: DenseVector,
    v_master: f64,
    /// `Y_pv v_v` in master-slave mode, zeros in island mode.
    master_injection: DenseVector,
}

impl ResidualModel {
    pub fn new(
        net: ReducedNetwork,
        power: DenseVector,
        droop: DenseVector,
        v_ref: DenseVector,
        v_master: f64,
    ) -> Result<Self, PowerFlowError> {
        let n = net.dim();
        for (name, len) in [("power", power.len()), ("droop", droop.len()), ("v_ref", v_ref.len())] {
            if len != n {
                return Err(PowerFlowError::Dimension(format!("{name} has {len} entries, network has {n}")));
            }
        }
        let mode = net.mode;
        if mode == Mode::Island && net.y_s.rows() != n {
            return Err(PowerFlowError::Dimension("island network without Y_s".into()));
        }
        let master_injection = match mode {
            Mode::MasterSlave if net.y_pv.cols() == 1 => net.y_pv.column(0).scale(v_master),
            Mode::MasterSlave => return Err(PowerFlowError::Dimension("master-slave network without a master".into())),
            Mode::Island => DenseVector::zeros(n),
        };
        Ok(Self {
            mode,
            net,
            power,
            droop,
            v_ref,
            v_master,
            master_injection,
        })
    }

    /// Reduces a case and collects the terminal data in reduced-row order.
    ///
    /// A [`VoltageReference::OperatingPoint`] reference is resolved by solving
    /// the master-slave power flow of the same network with full Newton.
    pub fn from_case(case: &GridCase) -> Result<Self, PowerFlowError> {
        let net = reduce(case)?;
        let node = |id: &str| case.node(id).expect("reduced rows come from the case");
        let power: DenseVector = net.index_map.iter().map(|id| node(id).power).collect();
        let droop: DenseVector = net.index_map.iter().map(|id| node(id).droop).collect();
        let v_ref: DenseVector = match case.v_ref() {
            VoltageReference::Fixed { .. } => net
                .index_map
                .iter()
                .map(|id| case.reference_voltage(id).expect("fixed reference"))
                .collect(),
            VoltageReference::OperatingPoint => {
                let ms = case.with_mode(Mode::MasterSlave)?.with_v_ref(VoltageReference::Fixed {
                    default: 1.0,
                    overrides: Default::default(),
                })?;
                let model = ResidualModel::from_case(&ms)?;
                newton_solve(&model, &SolverConfig::default())?.voltages
            }
        };
        Self::new(net, power, droop, v_ref, case.v_master())
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.net.dim()
    }

    pub fn net(&self) -> &ReducedNetwork {
        &self.net
    }

    pub fn power(&self) -> &DenseVector {
        &self.power
    }

    pub fn droop(&self) -> &DenseVector {
        &self.droop
    }

    pub fn v_ref(&self) -> &DenseVector {
        &self.v_ref
    }

    pub fn v_master(&self) -> f64 {
        self.v_master
    }

    /// Same model with all injected powers multiplied by `factor`.
    pub fn with_power_scale(&self, factor: f64) -> Self {
        Self {
            power: self.power.scale(factor),
            ..self.clone()
        }
    }

    /// The network matrix of the active mode, `Y_pp` or `Y_s`.
    pub fn network_matrix(&self) -> &DenseMatrix {
        self.net.operating_matrix()
    }

    /// Numerator of the constant-power term: `P` in master-slave mode and
    /// `P + C v_n` in island mode.
    pub fn effective_power(&self) -> DenseVector {
        match self.mode {
            Mode::MasterSlave => self.power.clone(),
            Mode::Island => self.power.add(&self.droop.hadamard(&self.v_ref)),
        }
    }

    fn check_voltage(&self, v: &[f64]) -> Result<(), PowerFlowError> {
        if v.len() != self.dim() {
            return Err(PowerFlowError::Dimension(format!(
                "voltage vector has {} entries, network has {}",
                v.len(),
                self.dim()
            )));
        }
        match v.iter().position(|x| *x == 0.0) {
            Some(index) => Err(PowerFlowError::ZeroVoltage { index }),
            None => Ok(()),
        }
    }
}

/// Evaluates `F(v)` for the model's mode.
pub fn residual(model: &ResidualModel, v: &[f64]) -> Result<DenseVector, PowerFlowError> {
    model.check_voltage(v)?;
    let yv = model.network_matrix().matvec(v);
    let f = (0..model.dim())
        .map(|i| {
            let terminal = match model.mode {
                Mode::MasterSlave => model.power[i] / v[i],
                Mode::Island => (model.power[i] - model.droop[i] * (v[i] - model.v_ref[i])) / v[i],
            };
            terminal - model.master_injection[i] - yv[i]
        })
        .collect();
    Ok(f)
}

/// Closed-form Jacobian `DF(v) = −diag(P_eff) diag(v)⁻² − Y`.
pub fn jacobian(model: &ResidualModel, v: &[f64]) -> Result<DenseMatrix, PowerFlowError> {
    model.check_voltage(v)?;
    let p_eff = model.effective_power();
    let mut j = model.network_matrix().scale(-1.0);
    for i in 0..model.dim() {
        j[(i, i)] -= p_eff[i] / (v[i] * v[i]);
    }
    Ok(j)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Newton,
    ApproxNewton,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Stop once `‖F(v_k)‖ ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
    pub variant: Variant,
    /// Initial point; the flat start `ê` when `None`.
    pub v0: Option<DenseVector>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            variant: Variant::Newton,
            v0: None,
        }
    }
}

impl SolverConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), PowerFlowError> {
        if !(self.tol > 0.0) {
            return Err(PowerFlowError::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(PowerFlowError::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub v: DenseVector,
    pub residual_norm: f64,
    /// `‖Δv_k‖` of the step taken from this iterate; `None` on the last one.
    pub step_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations: usize,
}

impl SolveTrace {
    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual_norm).collect()
    }

    pub fn step_norms(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.step_norm).collect()
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.records.last().map(|r| r.residual_norm)
    }

    /// Writes `iter,residual_norm,step_norm` rows, one per record.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "residual_norm", "step_norm"])?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                format!("{:e}", r.residual_norm),
                r.step_norm.map(|s| format!("{s:e}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub voltages: DenseVector,
    pub trace: SolveTrace,
    pub min_voltage: f64,
}

/// Full Newton iteration `v_{k+1} = v_k − DF(v_k)⁻¹ F(v_k)`.
pub fn newton_solve(model: &ResidualModel, cfg: &SolverConfig) -> Result<SolveResult, PowerFlowError> {
    iterate(model, cfg, |v, f| Ok(LuFactors::factor(&jacobian(model, v)?)?.solve(f)?))
}

/// Approximated Newton iteration `v_{k+1} = v_k − Γ₀ F(v_k)` with `Γ₀⁻¹ = DF(v_0)`
/// factored once.
pub fn approx_newton_solve(model: &ResidualModel, cfg: &SolverConfig) -> Result<SolveResult, PowerFlowError> {
    let mut gamma0: Option<LuFactors> = None;
    iterate(model, cfg, |v, f| {
        let lu = match &gamma0 {
            Some(lu) => lu,
            None => gamma0.insert(LuFactors::factor(&jacobian(model, v)?)?),
        };
        Ok(lu.solve(f)?)
    })
}

/// Runs the variant selected in `cfg`.
pub fn solve(model: &ResidualModel, cfg: &SolverConfig) -> Result<SolveResult, PowerFlowError> {
    match cfg.variant {
        Variant::Newton => newton_solve(model, cfg),
        Variant::ApproxNewton => approx_newton_solve(model, cfg),
    }
}

enum StepError {
    Singular(NumericsError),
    Other(PowerFlowError),
}

impl From<NumericsError> for StepError {
    fn from(e: NumericsError) -> Self {
        StepError::Singular(e)
    }
}

impl From<PowerFlowError> for StepError {
    fn from(e: PowerFlowError) -> Self {
        StepError::Other(e)
    }
}

/// Shared driver; `step_at(v, F(v))` returns the correction `Δv` subtracted from `v`.
fn iterate<S>(model: &ResidualModel, cfg: &SolverConfig, mut step_at: S) -> Result<SolveResult, PowerFlowError>
where
    S: FnMut(&[f64], &DenseVector) -> Result<DenseVector, StepError>,
{
    cfg.validate()?;
    let mut v = cfg.v0.clone().unwrap_or_else(|| DenseVector::ones(model.dim()));
    model.check_voltage(&v)?;
    let mut trace = SolveTrace::default();
    let mut streak = 0;

    let diverged = |reason, trace: SolveTrace| PowerFlowError::Diverged {
        reason,
        trace: Box::new(trace),
    };

    for k in 0.. {
        if v.iter().any(|x| *x <= 0.0) {
            return Err(diverged(DivergenceReason::NonPositiveVoltage, trace));
        }
        let f = residual(model, &v)?;
        let r = sup_norm(&f).expect("nonempty network");
        if let Some(prev) = trace.records.last() {
            streak = if r > prev.residual_norm { streak + 1 } else { 0 };
        }
        trace.records.push(IterationRecord {
            iter: k,
            v: v.clone(),
            residual_norm: r,
            step_norm: None,
        });
        trace.iterations = k;
        if !r.is_finite() || !v.is_finite() {
            return Err(diverged(DivergenceReason::NonFinite, trace));
        }
        if r <= cfg.tol {
            trace.converged = true;
            let min_voltage = v.min();
            return Ok(SolveResult {
                voltages: v,
                trace,
                min_voltage,
            });
        }
        if streak >= DIVERGENCE_STREAK {
            return Err(diverged(DivergenceReason::GrowingResidual, trace));
        }
        if k >= cfg.max_iter {
            return Err(PowerFlowError::MaxIterations { trace: Box::new(trace) });
        }
        let step = match step_at(&v, &f) {
            Ok(step) => step,
            Err(StepError::Singular(source)) => {
                return Err(PowerFlowError::SingularJacobian {
                    iteration: k,
                    source,
                    trace: Box::new(trace),
                })
            }
            Err(StepError::Other(e)) => return Err(e),
        };
        trace.records.last_mut().expect("pushed above").step_norm = Some(sup_norm(&step).expect("nonempty"));
        v = v.sub(&step);
    }
    unreachable!("loop exits through return")
}

/// Empirical convergence orders `log r_{k+1} / log r_k` over consecutive
/// residual pairs with `r_k < 1` and `r_{k+1} > floor`.
pub fn empirical_orders(residuals: &[f64], floor: f64) -> Vec<f64> {
    residuals
        .windows(2)
        .filter(|w| w[0] < 1.0 && w[1] > floor && w[1] > 0.0)
        .map(|w| w[1].ln() / w[0].ln())
        .collect()
}

/// Successive reduction ratios `r_{k+1} / r_k` over pairs with `r_{k+1} > floor`.
pub fn reduction_ratios(residuals: &[f64], floor: f64) -> Vec<f64> {
    residuals
        .windows(2)
        .filter(|w| w[1] > floor && w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .collect()
}
