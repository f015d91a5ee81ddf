//! A priori convergence certificates.
//!
//! Every quantity here is computed from the network and load data alone,
//! without running an iteration. With the sup norm,
//!
//! * `ρ = ‖Y_pp⁻¹‖` (largest Thevenin impedance), `α = ‖P‖`,
//!   `ξ = ‖Y_pv v_v‖`, `μ = ‖Y_pv v_v + Y_pp ê‖` for master-slave operation;
//! * `α = ‖P + C v_n‖`, `γ = ‖(Y_s + diag(P + C v_n))⁻¹‖`,
//!   `ξ = ‖P − C(ê − v_n) − Y_s ê‖` for island operation.
//!
//! Newton certificates combine these into a Kantorovich ratio `h` and a ball
//! radius `δ` around the flat start. Approximated-Newton certificates search
//! for a pair `(β, δ)` under which `T(v) = v − Γ₀F(v)` is a contraction that
//! maps the ball into itself.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{Mode, ReducedNetwork};
use crate::numerics::{inverse_sup_norm, min_positive_real_root, sup_norm, DenseVector, NumericsError};
use crate::powerflow::ResidualModel;

/// Threshold on the master-slave Newton ratio.
pub const H_THRESHOLD_MASTER: f64 = 0.25;
/// Threshold on the island Newton ratio.
pub const H_THRESHOLD_ISLAND: f64 = 0.5;
/// Step of the `δ` grid searched by the approximated-Newton certificates.
pub const DELTA_GRID_STEP: f64 = 1e-4;
/// Default `δ` at which the reported `β` is evaluated.
pub const DEFAULT_DELTA_PROBE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertError {
    #[error("singular {what}: {source}")]
    Singular {
        what: &'static str,
        #[source]
        source: NumericsError,
    },
    #[error("loadability polynomial has no positive real root")]
    NoPositiveRoot,
    #[error("{0}")]
    Invalid(String),
}

impl CertError {
    pub fn is_singular(&self) -> bool {
        matches!(self, CertError::Singular { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Newton,
    Approx,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Newton => "newton",
            Method::Approx => "approx",
        })
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "newton" => Ok(Method::Newton),
            "approx" | "approx-newton" | "approximated" => Ok(Method::Approx),
            other => Err(format!("unknown method `{other}` (expected newton or approx)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Quadratic,
    Linear,
    NoGuarantee,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Quadratic => "quadratic",
            Verdict::Linear => "linear",
            Verdict::NoGuarantee => "no_guarantee",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantSet {
    pub mode: Mode,
    /// `‖Y_pp⁻¹‖`, master-slave only.
    pub rho: Option<f64>,
    pub alpha: f64,
    pub xi: f64,
    /// Flat-start current, master-slave only.
    pub mu: Option<f64>,
    /// Flat-start inverse Jacobian norm, island only.
    pub gamma: Option<f64>,
}

impl ConstantSet {
    /// Master-slave constants without `ξ`, which no certificate uses.
    pub fn master(alpha: f64, rho: f64, mu: f64) -> Self {
        Self {
            mode: Mode::MasterSlave,
            rho: Some(rho),
            alpha,
            xi: f64::NAN,
            mu: Some(mu),
            gamma: None,
        }
    }

    pub fn island(alpha: f64, gamma: f64, xi: f64) -> Self {
        Self {
            mode: Mode::Island,
            rho: None,
            alpha,
            xi,
            mu: None,
            gamma: Some(gamma),
        }
    }

    /// Lipschitz constant `K = 2α/(1−δ)³` of the Jacobian on the ball of
    /// radius `δ < 1` around `ê`.
    pub fn lipschitz_k(&self, delta: f64) -> f64 {
        2.0 * self.alpha / (1.0 - delta).powi(3)
    }

    fn rho_mu(&self) -> (f64, f64) {
        (
            self.rho.expect("master-slave constants carry rho"),
            self.mu.expect("master-slave constants carry mu"),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub mode: Mode,
    pub method: Method,
    pub constants: ConstantSet,
    /// Left-hand side of the convergence inequality.
    pub h_ratio: Option<f64>,
    /// `‖F(v₀)‖‖Γ₀‖²K` bound in the generic Kantorovich form (threshold ½).
    pub h_theorem1: Option<f64>,
    pub h_threshold: Option<f64>,
    /// `δ`: bound on the first Newton step, or the invariant ball radius of
    /// the approximated iteration.
    pub delta: Option<f64>,
    /// Contraction constant of the approximated iteration.
    pub beta: Option<f64>,
    pub lipschitz_k: Option<f64>,
    /// Bound on the distance moved by the first step.
    pub r_move: Option<f64>,
    /// Largest load norm with guaranteed quadratic convergence.
    pub alpha_max: Option<f64>,
    pub delta_probe: Option<f64>,
    /// `β` evaluated at `delta_probe`.
    pub beta_report: Option<f64>,
    /// `r_move / (1 − β_report)`, the radius implied by `beta_report`.
    pub delta_report: Option<f64>,
    pub verdict: Verdict,
}

impl Certificate {
    fn empty(constants: ConstantSet, method: Method) -> Self {
        Self {
            mode: constants.mode,
            method,
            constants,
            h_ratio: None,
            h_theorem1: None,
            h_threshold: None,
            delta: None,
            beta: None,
            lipschitz_k: None,
            r_move: None,
            alpha_max: None,
            delta_probe: None,
            beta_report: None,
            delta_report: None,
            verdict: Verdict::NoGuarantee,
        }
    }

    pub fn is_guaranteed(&self) -> bool {
        self.verdict != Verdict::NoGuarantee
    }

    /// Radius around `ê` that contains the solution.
    ///
    /// For the approximated method this is `δ`. For Newton `δ` only bounds
    /// the first step `η`; the solution lies within the Kantorovich radius
    /// `η(1 − √(1 − 2h))/h` with `h = h_theorem1`, defined for `h ≤ ½`.
    pub fn solution_radius(&self) -> Option<f64> {
        match (self.verdict, self.method) {
            (Verdict::NoGuarantee, _) => None,
            (_, Method::Approx) => self.delta,
            (_, Method::Newton) => {
                let (eta, h) = (self.r_move?, self.h_theorem1?);
                if h > 0.5 {
                    None
                } else if h == 0.0 {
                    Some(eta)
                } else {
                    Some(eta * (1.0 - (1.0 - 2.0 * h).sqrt()) / h)
                }
            }
        }
    }
}

fn ones(n: usize) -> DenseVector {
    DenseVector::ones(n)
}

/// Master-slave constants `ρ, α, ξ, μ`.
pub fn constants_master(net: &ReducedNetwork, power: &[f64], v_master: f64) -> Result<ConstantSet, CertError> {
    if net.y_pv.cols() != 1 {
        return Err(CertError::Invalid("master-slave constants need a master node".into()));
    }
    let rho = inverse_sup_norm(&net.y_pp).map_err(|source| CertError::Singular { what: "Y_pp", source })?;
    let alpha = sup_norm(power).map_err(|e| CertError::Invalid(e.to_string()))?;
    let master = net.y_pv.column(0).scale(v_master);
    let xi = sup_norm(&master).expect("nonempty");
    let flat = master.add(&net.y_pp.matvec(&ones(net.dim())));
    let mu = sup_norm(&flat).expect("nonempty");
    Ok(ConstantSet {
        mode: Mode::MasterSlave,
        rho: Some(rho),
        alpha,
        xi,
        mu: Some(mu),
        gamma: None,
    })
}

/// Island constants `α, γ, ξ`.
pub fn constants_island(
    net: &ReducedNetwork,
    power: &[f64],
    droop: &[f64],
    v_ref: &[f64],
) -> Result<ConstantSet, CertError> {
    let n = net.dim();
    if net.y_s.rows() != n || power.len() != n || droop.len() != n || v_ref.len() != n {
        return Err(CertError::Invalid("island constants need conformal Y_s, P, C and v_n".into()));
    }
    let p_eff: DenseVector = (0..n).map(|i| power[i] + droop[i] * v_ref[i]).collect();
    let alpha = sup_norm(&p_eff).expect("nonempty");
    let gamma = inverse_sup_norm(&net.y_s.add_diagonal(&p_eff)).map_err(|source| CertError::Singular {
        what: "island Jacobian at the flat start",
        source,
    })?;
    let ys_e = net.y_s.matvec(&ones(n));
    let flat: DenseVector = (0..n).map(|i| power[i] - droop[i] * (1.0 - v_ref[i]) - ys_e[i]).collect();
    let xi = sup_norm(&flat).expect("nonempty");
    Ok(ConstantSet {
        mode: Mode::Island,
        rho: None,
        alpha,
        xi,
        mu: None,
        gamma: Some(gamma),
    })
}

/// Constants for whichever mode the model is in.
pub fn constants(model: &ResidualModel) -> Result<ConstantSet, CertError> {
    match model.mode() {
        Mode::MasterSlave => constants_master(model.net(), model.power(), model.v_master()),
        Mode::Island => constants_island(model.net(), model.power(), model.droop(), model.v_ref()),
    }
}

/// Master-slave Newton ratio `αρ²(1−αρ)(α+μ)/(1−2αρ−μρ)³`, or `None` when
/// the denominator or `1 − αρ` is not positive.
pub fn newton_master_ratio(alpha: f64, rho: f64, mu: f64) -> Option<f64> {
    let denom = 1.0 - 2.0 * alpha * rho - mu * rho;
    if alpha * rho >= 1.0 || denom <= 0.0 {
        return None;
    }
    Some(alpha * rho * rho * (1.0 - alpha * rho) * (alpha + mu) / denom.powi(3))
}

pub fn certify_newton_master(c: &ConstantSet) -> Certificate {
    let (rho, mu) = c.rho_mu();
    let alpha = c.alpha;
    let mut cert = Certificate::empty(c.clone(), Method::Newton);
    cert.h_threshold = Some(H_THRESHOLD_MASTER);
    cert.alpha_max = max_power_master(rho, mu).ok();
    if alpha * rho < 1.0 {
        let delta = (alpha + mu) * rho / (1.0 - alpha * rho);
        cert.delta = Some(delta);
        cert.r_move = Some(delta);
        if delta < 1.0 {
            cert.lipschitz_k = Some(c.lipschitz_k(delta));
        }
    }
    if let Some(h) = newton_master_ratio(alpha, rho, mu) {
        cert.h_ratio = Some(h);
        cert.h_theorem1 = Some(2.0 * h);
        if h < H_THRESHOLD_MASTER && cert.delta.is_some_and(|d| d < 1.0) {
            cert.verdict = Verdict::Quadratic;
        }
    }
    cert
}

pub fn certify_newton_island(c: &ConstantSet) -> Certificate {
    let gamma = c.gamma.expect("island constants carry gamma");
    let (alpha, xi) = (c.alpha, c.xi);
    let mut cert = Certificate::empty(c.clone(), Method::Newton);
    cert.h_threshold = Some(H_THRESHOLD_ISLAND);
    let delta = xi * gamma;
    cert.delta = Some(delta);
    cert.r_move = Some(delta);
    if delta < 1.0 {
        let h = xi * gamma * gamma * alpha / (1.0 - delta).powi(3);
        let k = c.lipschitz_k(delta);
        cert.h_ratio = Some(h);
        cert.h_theorem1 = Some(xi * gamma * gamma * k);
        cert.lipschitz_k = Some(k);
        if h < H_THRESHOLD_ISLAND {
            cert.verdict = Verdict::Quadratic;
        }
    }
    cert
}

/// Smallest `δ` on the grid with `β(δ) < 1` and `scale · drive / (1 − β) ≤ δ`.
fn search_contraction(beta_at: impl Fn(f64) -> f64, reach: f64) -> Option<(f64, f64)> {
    let steps = (1.0 / DELTA_GRID_STEP).round() as usize;
    (1..steps).find_map(|k| {
        let delta = k as f64 * DELTA_GRID_STEP;
        let beta = beta_at(delta);
        (beta < 1.0 && reach / (1.0 - beta) <= delta).then_some((beta, delta))
    })
}

fn approx_certificate(
    c: &ConstantSet,
    gain: f64,
    drive: f64,
    delta_probe: f64,
) -> Certificate {
    let alpha = c.alpha;
    let beta_at = |delta: f64| gain * (alpha + 1.0 / (1.0 - delta).powi(2));
    let reach = gain * drive;
    let mut cert = Certificate::empty(c.clone(), Method::Approx);
    cert.r_move = Some(reach);
    cert.delta_probe = Some(delta_probe);
    if delta_probe < 1.0 {
        let b = beta_at(delta_probe);
        cert.beta_report = Some(b);
        if b < 1.0 {
            cert.delta_report = Some(reach / (1.0 - b));
        }
    }
    if let Some((beta, delta)) = search_contraction(beta_at, reach) {
        cert.beta = Some(beta);
        cert.delta = Some(delta);
        cert.verdict = Verdict::Linear;
    }
    cert
}

/// Contraction certificate for the approximated method in master-slave
/// operation, with `‖Γ₀‖ ≤ ρ/(1−αρ)`.
pub fn certify_approx_master(c: &ConstantSet, delta_probe: f64) -> Certificate {
    let (rho, mu) = c.rho_mu();
    if c.alpha * rho >= 1.0 {
        let mut cert = Certificate::empty(c.clone(), Method::Approx);
        cert.delta_probe = Some(delta_probe);
        return cert;
    }
    let gain = rho / (1.0 - c.alpha * rho);
    approx_certificate(c, gain, c.alpha + mu, delta_probe)
}

/// Contraction certificate for the approximated method in island operation.
pub fn certify_approx_island(c: &ConstantSet, delta_probe: f64) -> Certificate {
    let gamma = c.gamma.expect("island constants carry gamma");
    approx_certificate(c, gamma, c.xi, delta_probe)
}

/// Dispatches on mode and method.
pub fn certify(c: &ConstantSet, method: Method, delta_probe: f64) -> Certificate {
    match (c.mode, method) {
        (Mode::MasterSlave, Method::Newton) => certify_newton_master(c),
        (Mode::MasterSlave, Method::Approx) => certify_approx_master(c, delta_probe),
        (Mode::Island, Method::Newton) => certify_newton_island(c),
        (Mode::Island, Method::Approx) => certify_approx_island(c, delta_probe),
    }
}

/// Ascending coefficients of
/// `s(α) = 4αρ²(1−αρ)(α+μ) − (1−2αρ−μρ)³`.
pub fn loadability_polynomial(rho: f64, mu: f64) -> [f64; 4] {
    let a = 1.0 - mu * rho;
    [
        -a * a * a,
        4.0 * rho * rho * mu + 6.0 * rho * a * a,
        -8.0 * rho * rho * a,
        4.0 * rho * rho * rho,
    ]
}

/// Largest load norm `α_m` for which the master-slave Newton certificate
/// holds: the smallest positive real root of the loadability polynomial.
pub fn max_power_master(rho: f64, mu: f64) -> Result<f64, CertError> {
    if !(rho > 0.0) {
        return Err(CertError::Invalid(format!("rho must be positive, got {rho}")));
    }
    min_positive_real_root(&loadability_polynomial(rho, mu)).map_err(|e| match e {
        NumericsError::NoPositiveRoot => CertError::NoPositiveRoot,
        other => CertError::Invalid(other.to_string()),
    })
}
