//! Exit criteria. Each test prints one `PASS`/`FAIL` line and asserts it.

mod common;

use std::time::Instant;

use common::{ball_point, random_case, rng, sup, CaseShape};
use gridcert::certifier::{
    certify, certify_approx_island, certify_newton_island, certify_newton_master, constants, max_power_master, Method,
    Verdict,
};
use gridcert::numerics::inverse_sup_norm;
use gridcert::powerflow::{empirical_orders, jacobian, reduction_ratios, residual, solve, SolveTrace, SolverConfig, Variant};
use gridcert::{parse_case, ConstantSet, GridCase, Mode, ResidualModel};
use rand::Rng;

const ROUNDOFF_FLOOR: f64 = 1e-12;

struct Checks {
    name: &'static str,
    items: Vec<(String, bool)>,
    start: Instant,
}

impl Checks {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            items: Vec::new(),
            start: Instant::now(),
        }
    }

    fn check(&mut self, label: impl Into<String>, ok: bool) {
        self.items.push((label.into(), ok));
    }

    fn within(&mut self, what: &str, got: f64, want: f64, rel: f64) {
        let err = ((got - want) / want).abs();
        self.check(format!("{what}={got:.6e} want {want:e} (rel err {err:.2e}, tol {rel:.0e})"), err <= rel);
    }

    fn finish(self) {
        let failed: Vec<&str> = self.items.iter().filter(|(_, ok)| !ok).map(|(l, _)| l.as_str()).collect();
        let status = if failed.is_empty() { "PASS" } else { "FAIL" };
        let detail: Vec<String> = self
            .items
            .iter()
            .map(|(l, ok)| format!("[{}] {l}", if *ok { "ok" } else { "x" }))
            .collect();
        println!("{status} {} ({:.0} ms): {}", self.name, self.start.elapsed().as_secs_f64() * 1e3, detail.join("; "));
        assert!(failed.is_empty(), "{} failed: {}", self.name, failed.join("; "));
    }
}

fn fixture_model(mode: Mode) -> ResidualModel {
    let case = common::ieee21().with_mode(mode).unwrap();
    ResidualModel::from_case(&case).unwrap()
}

fn run(model: &ResidualModel, variant: Variant) -> SolveTrace {
    solve(model, &SolverConfig::with_variant(variant)).unwrap().trace
}

fn series(r: &[f64]) -> String {
    let items: Vec<String> = r.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", items.join(", "))
}

/// Successive reduction ratios from iteration 1 on stay within a factor of
/// ten of each other and at least one pre-roundoff order falls below 1.9.
fn is_linear(residuals: &[f64]) -> bool {
    let ratios = reduction_ratios(&residuals[1..], ROUNDOFF_FLOOR);
    let orders = empirical_orders(residuals, ROUNDOFF_FLOOR);
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
    ratios.len() >= 2 && hi <= 10.0 * lo && hi < 1.0 && orders.iter().any(|&q| q < 1.9)
}

#[test]
fn criterion_1_master_slave_constants() {
    let mut c = Checks::new("criterion 1: master-slave certificate constants");
    let model = fixture_model(Mode::MasterSlave);
    let k = constants(&model).unwrap();
    let cert = certify_newton_master(&k);
    c.within("alpha", k.alpha, 0.8000, 5e-3);
    c.within("rho", k.rho.unwrap(), 0.2443, 5e-3);
    c.within("mu", k.mu.unwrap(), 0.1231, 5e-3);
    c.within("h", cert.h_ratio.unwrap(), 0.1827, 5e-3);
    c.within("delta", cert.delta.unwrap(), 0.2803, 5e-3);
    c.finish();
}

#[test]
fn criterion_2_loadability_bound() {
    let mut c = Checks::new("criterion 2: maximum certified load");
    let k = constants(&fixture_model(Mode::MasterSlave)).unwrap();
    let am = max_power_master(k.rho.unwrap(), k.mu.unwrap()).unwrap();
    c.within("alpha_max", am, 1.2406, 1e-3);
    c.finish();
}

#[test]
fn criterion_3_master_slave_newton_trace() {
    let mut c = Checks::new("criterion 3: master-slave Newton trace");
    let r = run(&fixture_model(Mode::MasterSlave), Variant::Newton).residuals();
    c.within("r0", r[0], 0.796470017556558, 1e-6);
    c.within("r1", r[1], 1.58828e-4, 1e-2);
    let hit = r.iter().position(|&x| x <= 1e-12);
    c.check(format!("below 1e-12 at iteration {hit:?}, want <= 3"), hit.is_some_and(|k| k <= 3));
    let orders = empirical_orders(&r, ROUNDOFF_FLOOR);
    let min = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    c.check(format!("min empirical order {min:.3} >= 1.9"), !orders.is_empty() && min >= 1.9);
    c.finish();
}

#[test]
fn criterion_4_master_slave_approximated_trace() {
    let mut c = Checks::new("criterion 4: master-slave approximated Newton trace");
    let model = fixture_model(Mode::MasterSlave);
    let newton = solve(&model, &SolverConfig::with_variant(Variant::Newton)).unwrap().trace;
    let approx = solve(&model, &SolverConfig::with_variant(Variant::ApproxNewton)).unwrap().trace;
    let identical = newton.records[1].v.iter().zip(approx.records[1].v.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    c.check("iteration 1 bit-identical to Newton", identical);
    let r = approx.residuals();
    c.within("r2", r[2], 8.7443e-8, 5e-2);
    c.within("r3", r[3], 5.2993e-11, 5e-2);
    c.check(format!("linear rate by ratio test on {}", series(&r)), is_linear(&r));
    c.finish();
}

#[test]
fn criterion_5_island_relationships_and_decay() {
    let mut c = Checks::new("criterion 5: island certificate relationships and solver shape");
    let published = ConstantSet::island(19.9856, 0.0679, 0.6144);
    let newton = certify_newton_island(&published);
    c.within("delta", newton.delta.unwrap(), 0.0417, 1e-2);
    c.within("h", newton.h_ratio.unwrap(), 0.0643, 1e-2);
    c.check(format!("newton verdict {}", newton.verdict), newton.verdict == Verdict::Quadratic);
    let approx = certify_approx_island(&published, 0.0417);
    c.within("beta", approx.beta_report.unwrap(), 1.44, 1e-2);
    c.check(format!("approx verdict {}", approx.verdict), approx.verdict == Verdict::NoGuarantee);

    let model = fixture_model(Mode::Island);
    c.check("droop references at flat start", model.v_ref().iter().all(|&v| v == 1.0));
    let rn = run(&model, Variant::Newton).residuals();
    let orders = empirical_orders(&rn, ROUNDOFF_FLOOR);
    c.check(
        format!("newton converges quadratically {}", series(&rn)),
        !orders.is_empty() && orders.iter().all(|&q| q >= 1.9),
    );
    let ra = run(&model, Variant::ApproxNewton).residuals();
    c.check(format!("approx converges linearly {}", series(&ra)), is_linear(&ra));
    c.finish();
}

fn certified<F>(seed: u64, method: Method, cases: usize, mut f: F) -> usize
where
    F: FnMut(&mut rand_chacha::ChaCha8Rng, &ResidualModel, &gridcert::Certificate),
{
    let mut rng = rng(seed);
    let mut n = 0;
    for i in 0..cases {
        let mode = if i % 2 == 0 { Mode::MasterSlave } else { Mode::Island };
        let load = rng.random_range(0.05..1.5);
        let model = ResidualModel::from_case(&random_case(&mut rng, CaseShape { load, ..CaseShape::default() }, mode)).unwrap();
        let cert = certify(&constants(&model).unwrap(), method, 0.1);
        if cert.is_guaranteed() {
            f(&mut rng, &model, &cert);
            n += 1;
        }
    }
    n
}

fn variant(method: Method) -> Variant {
    match method {
        Method::Newton => Variant::Newton,
        Method::Approx => Variant::ApproxNewton,
    }
}

#[test]
fn criterion_6_property_suite() {
    let mut c = Checks::new("criterion 6: property suite");
    let mut rng = rng(600);

    let mut lipschitz_ok = true;
    for delta in [0.1, 0.28, 0.5] {
        for i in 0..500 {
            let mode = if i % 2 == 0 { Mode::MasterSlave } else { Mode::Island };
            let model = ResidualModel::from_case(&random_case(&mut rng, CaseShape::default(), mode)).unwrap();
            let k = constants(&model).unwrap().lipschitz_k(delta);
            let u = ball_point(&mut rng, model.dim(), delta);
            let v = ball_point(&mut rng, model.dim(), delta);
            let lhs = jacobian(&model, &v).unwrap().sub(&jacobian(&model, &u).unwrap()).induced_norm();
            lipschitz_ok &= lhs <= k * sup(&v.sub(&u)) * (1.0 + 1e-12) + 1e-12;
        }
    }
    c.check("Lipschitz bound on 3x500 pairs", lipschitz_ok);

    let (mut banach, mut banach_ok) = (0, true);
    while banach < 50 {
        let load = rng.random_range(0.05..3.0);
        let model =
            ResidualModel::from_case(&random_case(&mut rng, CaseShape { load, ..CaseShape::default() }, Mode::MasterSlave)).unwrap();
        let k = constants(&model).unwrap();
        let (rho, alpha) = (k.rho.unwrap(), k.alpha);
        if alpha * rho < 1.0 {
            let exact = inverse_sup_norm(&jacobian(&model, &vec![1.0; model.dim()]).unwrap()).unwrap();
            banach_ok &= exact <= rho / (1.0 - alpha * rho) * (1.0 + 1e-12);
            banach += 1;
        }
    }
    c.check("Banach bound on 50 cases", banach_ok);

    let mut halving_ok = true;
    let n = certified(601, Method::Newton, 200, |_, model, _| {
        let steps = solve(model, &SolverConfig::default()).map(|r| r.trace.step_norms());
        halving_ok &= steps.is_ok_and(|s| s.windows(2).all(|w| w[1] <= ROUNDOFF_FLOOR || w[1] <= 0.5 * w[0]));
    });
    c.check(format!("step halving on {n} quadratic-certified cases"), halving_ok && n > 0);

    let mut decay_ok = true;
    let n = certified(602, Method::Approx, 200, |_, model, cert| {
        let beta = cert.beta.unwrap();
        let steps = solve(model, &SolverConfig::with_variant(Variant::ApproxNewton)).map(|r| r.trace.step_norms());
        decay_ok &= steps.is_ok_and(|s| s.windows(2).all(|w| w[1] <= ROUNDOFF_FLOOR || w[1] <= beta * w[0]));
    });
    c.check(format!("contraction decay on {n} linear-certified cases"), decay_ok && n > 0);

    let mut unique_ok = true;
    let mut cases = 0;
    for method in [Method::Newton, Method::Approx] {
        cases += certified(603, method, 20, |rng, model, cert| {
            let Ok(reference) = solve(model, &SolverConfig::with_variant(variant(method))) else {
                unique_ok = false;
                return;
            };
            for _ in 0..100 {
                let cfg = SolverConfig {
                    v0: Some(ball_point(rng, model.dim(), cert.delta.unwrap())),
                    ..SolverConfig::default()
                };
                unique_ok &= solve(model, &cfg).is_ok_and(|r| sup(&r.voltages.sub(&reference.voltages)) <= 1e-8);
            }
        });
    }
    c.check(format!("uniqueness over 100 multistarts on {cases} certified cases"), unique_ok && cases > 0);

    let mut oracle_ok = true;
    for _ in 0..50 {
        let g: f64 = rng.random_range(20.0..300.0);
        let p = g * rng.random_range(-0.199..0.199);
        let case = parse_case(&format!("#master 1 1.0\nfrom,to,r,P,inv_C\n1,2,{},{p},0\n", 1.0 / g)).unwrap();
        let model = ResidualModel::from_case(&case).unwrap();
        let exact = (1.0 + (1.0 + 4.0 * p / g).sqrt()) / 2.0;
        for v in [Variant::Newton, Variant::ApproxNewton] {
            oracle_ok &= solve(&model, &SolverConfig::with_variant(v)).is_ok_and(|r| (r.voltages[0] - exact).abs() <= 1e-10);
        }
    }
    c.check("two-node closed form for 50 (g, p)", oracle_ok);

    let (mut kron, mut kron_ok) = (0, true);
    let shape = CaseShape {
        zero_injection: 0.4,
        load: 0.5,
        ..CaseShape::default()
    };
    while kron < 50 {
        let case: GridCase = random_case(&mut rng, shape, Mode::MasterSlave);
        if !case.nodes().iter().any(|n| n.power == 0.0 && n.droop == 0.0 && n.kind != gridcert::netmodel::NodeKind::Master) {
            continue;
        }
        let reduced = ResidualModel::from_case(&case).unwrap();
        let full = ResidualModel::from_case(&case.with_explicit_zero_injection()).unwrap();
        let (Ok(a), Ok(b)) = (solve(&reduced, &SolverConfig::default()), solve(&full, &SolverConfig::default())) else {
            continue;
        };
        for (row, id) in reduced.net().index_map.iter().enumerate() {
            kron_ok &= (a.voltages[row] - b.voltages[full.net().row_of(id).unwrap()]).abs() <= 1e-10;
        }
        kron += 1;
    }
    c.check("Kron equivalence on 50 cases", kron_ok);

    let mut fd_ok = true;
    for i in 0..100 {
        let mode = if i % 2 == 0 { Mode::MasterSlave } else { Mode::Island };
        let model = ResidualModel::from_case(&random_case(&mut rng, CaseShape::default(), mode)).unwrap();
        let v: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(0.7..=1.3)).collect();
        let j = jacobian(&model, &v).unwrap();
        let h = 1e-6;
        for col in 0..model.dim() {
            let (mut plus, mut minus) = (v.clone(), v.clone());
            plus[col] += h;
            minus[col] -= h;
            let (fp, fm) = (residual(&model, &plus).unwrap(), residual(&model, &minus).unwrap());
            for row in 0..model.dim() {
                fd_ok &= ((fp[row] - fm[row]) / (2.0 * h) - j[(row, col)]).abs() <= 1e-5;
            }
        }
    }
    c.check("Jacobian vs central differences at 100 points", fd_ok);
    c.finish();
}
