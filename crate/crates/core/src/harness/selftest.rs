//! Invariant suite over the bundled instances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algorithms::{self, IterationState};
use crate::control::{self, CostWeights, FbdeTrajectory};
use crate::error::Result;
use crate::graph::DirectedGraph;
use crate::harness::bundled_configs;
use crate::harness::experiment::run_experiment;
use crate::linalg;
use crate::objective::{ObjectiveSet, QuadraticObjective};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Result<CostWeights> {
    let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let h: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    CostWeights::scalar(p, &q, &r, &h)
}

pub fn run(seed: u64) -> Result<SelftestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let mut worst_res: f64 = 0.0;
    let mut worst_asym: f64 = 0.0;
    let bundled = bundled_configs()?;
    for (_, cfg) in &bundled {
        let prep = cfg.prepare()?;
        let sol = control::solve_riccati(&prep.weights, prep.problem.incidence(), control::DEFAULT_RICCATI_TOL, control::DEFAULT_RICCATI_MAX_ITER)?;
        worst_res = worst_res.max(sol.residual);
        worst_asym = worst_asym.max(sol.asymmetry);
    }
    checks.push(check(
        "riccati_residual",
        worst_res <= 1e-10 && worst_asym <= 1e-12,
        format!("max residual {worst_res:e}, max asymmetry {worst_asym:e}"),
    ));

    let mut worst_m: f64 = 0.0;
    let mut monotone = true;
    for _ in 0..20 {
        let n = rng.random_range(2..=6);
        let g = DirectedGraph::random_balanced(n, 2, &mut rng)?;
        let sol = control::solve_riccati(&CostWeights::identity(n, 1), &g.incidence(), control::DEFAULT_RICCATI_TOL, control::DEFAULT_RICCATI_MAX_ITER)?;
        let d: Vec<f64> = (400..=500).map(|l| sol.m_limit_distance(l)).collect();
        worst_m = worst_m.max(d[100]);
        monotone &= d.windows(2).all(|w| w[1] <= w[0]);
    }
    checks.push(check("m_limit", worst_m <= 1e-8 && monotone, format!("max distance at l=500 {worst_m:e}, nonincreasing {monotone}")));

    let mut worst_fbde: f64 = 0.0;
    for _ in 0..10 {
        let n = rng.random_range(2..=5);
        let p = rng.random_range(1..=2);
        let g = DirectedGraph::random_balanced(n, 1, &mut rng)?;
        let b = g.incidence();
        let w = random_weights(&mut rng, n, p)?;
        let horizon = rng.random_range(1..=10);
        let x0 = DVector::from_fn(n * p, |_, _| rng.random_range(-2.0..2.0));
        let grads = (0..horizon + 2).map(|_| DVector::from_fn(n * p, |_, _| rng.random_range(-1.0..1.0))).collect();
        let traj = FbdeTrajectory::simulate(&w, &b, x0, grads)?;
        worst_fbde = worst_fbde.max(control::fbde_check(&w, &b, &traj, 1e-9)?.max_residual);
    }
    checks.push(check("fbde_consistency", worst_fbde <= 1e-9, format!("max residual {worst_fbde:e}")));

    let mut worst_cf: f64 = 0.0;
    let mut rho_ok = true;
    let mut rho_range = (f64::INFINITY, 0.0_f64);
    for _ in 0..50 {
        let n = rng.random_range(2..=6);
        let p = rng.random_range(1..=3);
        let g = DirectedGraph::random_balanced(n, 1, &mut rng)?;
        let b = g.incidence();
        let objectives = ObjectiveSet::quadratics((0..n).map(|_| QuadraticObjective::random(p, 0.5, 3.0, 2.0, &mut rng)).collect::<Result<_>>()?)?;
        let sol = control::solve_riccati(&random_weights(&mut rng, n, p)?, &b, 1e-12, control::DEFAULT_RICCATI_MAX_ITER)?;
        let k = rng.random_range(0..=30);
        let x = DVector::from_fn(n * p, |_, _| rng.random_range(-3.0..3.0));
        let state = IterationState::observe(k, x, &b, &objectives)?;
        let a = algorithms::docmc_direction(&state, &sol, k)?;
        let c = algorithms::docmc_direction_closed(&state, &sol)?;
        worst_cf = worst_cf.max((a - c).amax());
        let blocks: Vec<DMatrix<f64>> = (0..n)
            .map(|_| QuadraticObjective::random(p, 0.1, 5.0, 0.0, &mut rng).map(|q| q.a().clone()))
            .collect::<Result<_>>()?;
        let rho = algorithms::docmc_rate(&sol, &linalg::block_diag(&blocks))?;
        rho_ok &= rho > 0.0 && rho < 1.0;
        rho_range = (rho_range.0.min(rho), rho_range.1.max(rho));
    }
    checks.push(check("closed_form_equivalence", worst_cf <= 1e-10, format!("max deviation {worst_cf:e}")));
    checks.push(check("spectral_precondition", rho_ok, format!("rho in [{:.6}, {:.6}]", rho_range.0, rho_range.1)));

    let mut worst_g: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    for (_, cfg) in &bundled {
        let prep = cfg.prepare()?;
        let obj = &prep.problem.objectives;
        for i in 0..obj.n() {
            for _ in 0..10 {
                let x = DVector::from_fn(obj.dim(), |_, _| rng.random_range(-2.0..2.0));
                let (ge, he) = obj.derivative_errors(i, &x)?;
                worst_g = worst_g.max(ge);
                worst_h = worst_h.max(he);
            }
        }
    }
    checks.push(check(
        "derivatives",
        worst_g <= 1e-5 && worst_h <= 1e-3,
        format!("max relative error gradient {worst_g:e}, Hessian {worst_h:e}"),
    ));

    for (name, cfg) in &bundled {
        let a = run_experiment(cfg)?;
        let b = run_experiment(cfg)?;
        let identical = a.trace.to_csv() == b.trace.to_csv();
        let failures = &a.report.property_failures;
        let converged = !cfg.requires_convergence() || a.trace.converged;
        checks.push(check(
            &format!("run:{name}"),
            identical && failures.is_empty() && converged,
            format!(
                "deterministic {identical}, converged {converged}, class {}, failures {:?}",
                a.report.rate.as_ref().map_or("n/a", |r| r.classification.name()),
                failures
            ),
        ));
    }
    Ok(SelftestReport { seed, checks })
}
