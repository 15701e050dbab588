//! Acceptance suite: one PASS/FAIL line per criterion. Every measured
//! quantity is recomputed here from plain matrix algebra where possible.

use std::process::ExitCode;

use distopt::algorithms::{docmc_direction, docmc_direction_closed, docmc_rate, IterationState};
use distopt::control::{fbde_check, solve_riccati, CostWeights, FbdeTrajectory, DEFAULT_RICCATI_MAX_ITER, DEFAULT_RICCATI_TOL};
use distopt::graph::DirectedGraph;
use distopt::harness::bundled_configs;
use distopt::harness::config::{AlgorithmName, ExperimentConfig};
use distopt::harness::experiment::{run_experiment, write_outputs, ExperimentOutcome};
use distopt::harness::rate::RateClass;
use distopt::objective::{ObjectiveSet, QuadraticObjective};
use distopt::sim::message::Node;
use distopt::sim::trace::ConvergenceTrace;
use distopt::sim::{self, Problem, SimConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FLOOR: f64 = 1e-13;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

fn random_graph(rng: &mut ChaCha8Rng, n_max: usize) -> DirectedGraph {
    let n = rng.random_range(2..=n_max);
    let extra = rng.random_range(0..3);
    DirectedGraph::random_balanced(n, extra, rng).unwrap()
}

/// Random symmetric matrix with eigenvalues drawn from `[lo, hi]`.
fn random_spd(rng: &mut ChaCha8Rng, p: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    let q = g.qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(p, |_, _| rng.random_range(lo..=hi)));
    let a = &q * d * q.transpose();
    (&a + a.transpose()) * 0.5
}

fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(total, total);
    let mut o = 0;
    for b in blocks {
        out.view_mut((o, o), b.shape()).copy_from(b);
        o += b.nrows();
    }
    out
}

/// `B ⊗ I_p` built from the edge list.
fn incidence(g: &DirectedGraph, p: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(g.edge_count() * p, g.n() * p);
    for (r, e) in g.edges().iter().enumerate() {
        for c in 0..p {
            m[(r * p + c, e.from * p + c)] = 1.0;
            m[(r * p + c, e.to * p + c)] = -1.0;
        }
    }
    m
}

/// Largest eigenvalue modulus of a general square matrix.
fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().fold(0.0_f64, |a, z| a.max(z.norm()))
}

fn min_eigen_modulus(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().fold(f64::INFINITY, |a, z| a.min(z.norm()))
}

fn random_quadratic_problem(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Problem {
    let g = DirectedGraph::random_balanced(n, 2, rng).unwrap();
    let items = (0..n).map(|_| QuadraticObjective::random(p, 0.5, 2.0, 1.0, rng).unwrap()).collect();
    Problem::new(g, ObjectiveSet::quadratics(items).unwrap()).unwrap()
}

fn fixed_budget(max_iter: usize) -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.algorithm.max_iter = max_iter;
    cfg.algorithm.tol_grad = 0.0;
    cfg.algorithm.tol_edge = 0.0;
    cfg
}

/// `r(k)` for consecutive errors both above the floor.
fn ratios(errors: &[f64]) -> Vec<(usize, f64)> {
    (0..errors.len().saturating_sub(1))
        .filter(|&k| errors[k] >= FLOOR && errors[k + 1] >= FLOOR)
        .map(|k| (k, errors[k + 1] / errors[k]))
        .collect()
}

/// Stacked mean Hessian at the oracle minimizer, recomputed from the
/// objectives.
fn h_star(problem: &Problem) -> DMatrix<f64> {
    let p = problem.dim();
    let mut acc = DMatrix::zeros(p, p);
    for i in 0..problem.n() {
        acc += problem.objectives.hessian(i, &problem.x_star).unwrap();
    }
    acc /= problem.n() as f64;
    block_diag(&vec![(&acc + acc.transpose()) * 0.5; problem.n()])
}

fn bundled() -> Vec<(String, ExperimentConfig)> {
    bundled_configs().expect("bundled configs parse")
}

// 1
fn m_limit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst, mut monotone, mut all_ok) = (0.0_f64, true, true);
    for _ in 0..20 {
        let g = random_graph(&mut rng, 6);
        let n = g.n();
        let b = g.incidence();
        let sol = solve_riccati(&CostWeights::identity(n, 1), &b, DEFAULT_RICCATI_TOL, DEFAULT_RICCATI_MAX_ITER).unwrap();
        // Oracle: plain products of R Γ⁻¹ with R = I.
        let factor = sol.gamma().clone().try_inverse().unwrap();
        let mut m = DMatrix::<f64>::identity(n, n);
        for _ in 1..500 {
            m = &m * &factor;
        }
        let oracle = max_abs(&(m - DMatrix::from_element(n, n, 1.0 / n as f64)));
        worst = worst.max(oracle).max(sol.m_limit_distance(500));
        all_ok &= oracle <= 1e-8 && sol.m_limit_distance(500) <= 1e-8;
        let d: Vec<f64> = (401..=500).map(|l| sol.m_limit_distance(l)).collect();
        monotone &= d.windows(2).all(|w| w[1] <= w[0]);
    }
    outcome(all_ok && monotone, format!("20 graphs, worst distance at l=500 {worst:.2e}, nonincreasing over l=401..500: {monotone}"))
}

// 2
fn riccati_residual() -> Outcome {
    let mut worst_res = 0.0_f64;
    let mut worst_sym = 0.0_f64;
    let mut worst_oracle = 0.0_f64;
    let mut count = 0;
    for (_, cfg) in bundled() {
        if !matches!(cfg.algorithm.name, AlgorithmName::Docmc | AlgorithmName::Doaoc) {
            continue;
        }
        let prep = cfg.prepare().unwrap();
        let g = &prep.problem.graph;
        let p = prep.problem.dim();
        let b = prep.problem.incidence();
        let sol = solve_riccati(&prep.weights, b, DEFAULT_RICCATI_TOL, DEFAULT_RICCATI_MAX_ITER).unwrap();
        // Oracle: one step of the recursion with Q restricted to range(B).
        let bx = incidence(g, p);
        let proj = &bx * bx.clone().pseudo_inverse(1e-12).unwrap();
        let q = &proj * prep.weights.q_edges(b) * &proj;
        let r = prep.weights.r_stacked();
        let pm = sol.p();
        let gamma = &r + bx.transpose() * pm * &bx;
        let next = &q + pm - pm * &bx * gamma.try_inverse().unwrap() * bx.transpose() * pm;
        worst_oracle = worst_oracle.max(max_abs(&(next - pm)));
        worst_res = worst_res.max(sol.residual);
        worst_sym = worst_sym.max(max_abs(&(pm - pm.transpose())));
        count += 1;
    }
    let passed = worst_res <= 1e-10 && worst_oracle <= 1e-10 && worst_sym <= 1e-12;
    outcome(
        passed,
        format!("{count} configs, residual {worst_res:.2e} (recomputed {worst_oracle:.2e}), asymmetry {worst_sym:.2e}"),
    )
}

/// `J_N` for a control sequence, with the gradient schedule entering linearly.
fn horizon_cost(weights: &CostWeights, g: &DirectedGraph, p: usize, x0: &DVector<f64>, u: &[DVector<f64>], grads: &[DVector<f64>]) -> f64 {
    let b = g.incidence();
    let bx = incidence(g, p);
    let q = weights.q_edges(&b);
    let h = weights.h_edges(&b);
    let r = weights.r_stacked();
    let mut x = x0.clone();
    let mut j = 0.0;
    for (k, uk) in u.iter().enumerate() {
        let e = &bx * &x;
        j += 0.5 * e.dot(&(&q * &e)) + grads[k].dot(&x) + 0.5 * uk.dot(&(&r * uk));
        x += uk;
    }
    let e = &bx * &x;
    j + 0.5 * e.dot(&(&h * &e)) + grads[u.len()].dot(&x)
}

// 3
fn fbde() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0_f64;
    let mut worst_stationarity = 0.0_f64;
    let mut passed = true;
    for _ in 0..10 {
        let g = random_graph(&mut rng, 5);
        let n = g.n();
        let p = rng.random_range(1..=2);
        let horizon = rng.random_range(1..=10);
        let pick = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>();
        let (q, r, h) = (pick(&mut rng, 0.1, 3.0), pick(&mut rng, 0.5, 3.0), pick(&mut rng, 0.1, 3.0));
        let weights = CostWeights::scalar(p, &q, &r, &h).unwrap();
        let b = g.incidence();
        let x0 = DVector::from_fn(n * p, |_, _| rng.random_range(-1.0..1.0));
        let grads: Vec<DVector<f64>> = (0..horizon + 2).map(|_| DVector::from_fn(n * p, |_, _| rng.random_range(-1.0..1.0))).collect();
        let traj = FbdeTrajectory::simulate(&weights, &b, x0.clone(), grads.clone()).unwrap();
        let report = fbde_check(&weights, &b, &traj, 1e-9).unwrap();
        worst = worst.max(report.max_residual);
        passed &= report.passed();
        // Oracle: the controls are a stationary point of the cost.
        let step = 1e-4;
        for k in 0..traj.u.len() {
            for c in 0..n * p {
                let mut plus = traj.u.clone();
                let mut minus = traj.u.clone();
                plus[k][c] += step;
                minus[k][c] -= step;
                let d = (horizon_cost(&weights, &g, p, &x0, &plus, &grads) - horizon_cost(&weights, &g, p, &x0, &minus, &grads)) / (2.0 * step);
                worst_stationarity = worst_stationarity.max(d.abs());
            }
        }
    }
    passed &= worst_stationarity <= 1e-7;
    outcome(passed, format!("10 instances, worst residual {worst:.2e}, cost gradient at the controls {worst_stationarity:.2e}"))
}

// 4
fn closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut worst, mut worst_oracle) = (0.0_f64, 0.0_f64);
    for _ in 0..50 {
        let g = random_graph(&mut rng, 5);
        let n = g.n();
        let p = rng.random_range(1..=3);
        let k = rng.random_range(0..=30);
        let b = g.incidence();
        let weights = CostWeights::uniform(n, p, rng.random_range(0.2..3.0), rng.random_range(0.2..3.0), rng.random_range(0.2..3.0)).unwrap();
        let sol = solve_riccati(&weights, &b, DEFAULT_RICCATI_TOL, DEFAULT_RICCATI_MAX_ITER).unwrap();
        let hb = random_spd(&mut rng, p, 0.3, 2.5);
        let h = block_diag(&vec![hb; n]);
        let x = DVector::from_fn(n * p, |_, _| rng.random_range(-1.0..1.0));
        let gbar = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let gs = DVector::from_fn(n * p, |i, _| gbar[i % p]);
        let state = IterationState::new(k, x.clone(), &b, p, gs.clone(), gs.clone(), h.clone()).unwrap();
        let looped = docmc_direction(&state, &sol, k).unwrap();
        let closed = docmc_direction_closed(&state, &sol).unwrap();
        worst = worst.max((&looped - &closed).amax());
        // Oracle: the closed form with general inverses.
        let gamma = sol.gamma();
        let t = (gamma + &h).try_inverse().unwrap() * gamma;
        let mut tk = DMatrix::<f64>::identity(n * p, n * p);
        for _ in 0..=k {
            tk = &tk * &t;
        }
        let bx = incidence(&g, p);
        let e = &bx * &x;
        let eye = DMatrix::<f64>::identity(n * p, n * p);
        let oracle = -((&eye - &tk) * h.clone().try_inverse().unwrap() * &gs) - &tk * gamma.clone().try_inverse().unwrap() * bx.transpose() * sol.p() * e;
        worst_oracle = worst_oracle.max((&looped - oracle).amax());
    }
    outcome(
        worst <= 1e-10 && worst_oracle <= 1e-10,
        format!("50 instances, loop vs closed form {worst:.2e}, loop vs direct evaluation {worst_oracle:.2e}"),
    )
}

// 5
fn spectral_precondition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut lo, mut hi, mut gap) = (f64::INFINITY, 0.0_f64, 0.0_f64);
    for _ in 0..50 {
        let g = random_graph(&mut rng, 6);
        let n = g.n();
        let p = rng.random_range(1..=3);
        let weights = CostWeights::uniform(n, p, rng.random_range(0.2..5.0), rng.random_range(0.2..5.0), 1.0).unwrap();
        let sol = solve_riccati(&weights, &g.incidence(), DEFAULT_RICCATI_TOL, DEFAULT_RICCATI_MAX_ITER).unwrap();
        let m1 = rng.random_range(0.05..1.0);
        let m2 = m1 + rng.random_range(0.0..5.0);
        let h = block_diag(&(0..n).map(|_| random_spd(&mut rng, p, m1, m2)).collect::<Vec<_>>());
        let rho = docmc_rate(&sol, &h).unwrap();
        let t = (sol.gamma() + &h).try_inverse().unwrap() * sol.gamma();
        let oracle = spectral_radius(&t);
        gap = gap.max((rho - oracle).abs());
        hi = hi.max(rho).max(oracle);
        lo = lo.min(min_eigen_modulus(&t));
    }
    outcome(
        lo > 0.0 && hi < 1.0 && gap <= 1e-9,
        format!("50 draws, eigenvalue moduli in [{lo:.3e}, {hi:.6}], library vs general eigensolver {gap:.1e}"),
    )
}

/// `‖x − x̄‖` recomputed from a stacked state.
fn disagreement(x: &DVector<f64>, n: usize, p: usize) -> f64 {
    let mean = (0..n).fold(DVector::zeros(p), |acc: DVector<f64>, i| acc + x.rows(i * p, p)) / n as f64;
    (0..n).map(|i| (x.rows(i * p, p) - &mean).norm_squared()).sum::<f64>().sqrt()
}

// 6
fn consensus_contraction() -> Outcome {
    let mut traces: Vec<(String, ConvergenceTrace)> = Vec::new();
    for (name, cfg) in bundled() {
        if cfg.algorithm.name == AlgorithmName::Docmc && matches!(cfg.objective, distopt::harness::config::ObjectiveSpec::Quadratic { .. }) {
            traces.push((name, run_experiment(&cfg).unwrap().trace));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for t in 0..5 {
        let n = 4 + t % 3;
        let problem = random_quadratic_problem(&mut rng, n, 2);
        let weights = CostWeights::uniform(n, 2, 100.0, 3.0, 1.0).unwrap();
        let x0 = DVector::from_fn(n * 2, |_, _| rng.random_range(-1.0..1.0));
        traces.push((format!("random n={n}"), sim::run_docmc(&problem, &weights, &fixed_budget(40), x0).unwrap()));
    }
    let mut sigma = 0.0_f64;
    let mut measured = 0;
    for (_, trace) in &traces {
        let d: Vec<f64> = trace.states.iter().map(|x| disagreement(x, trace.n, trace.dim)).collect();
        let e = trace.errors();
        for k in 0..d.len() - 1 {
            if e[k + 1] >= FLOOR && d[k] >= FLOOR && d[k + 1] >= FLOOR {
                sigma = sigma.max(d[k + 1] / d[k]);
                measured += 1;
            }
        }
    }
    outcome(
        measured > 0 && sigma < 1.0,
        format!("{} DOCMC traces, {measured} ratios above the floor, sigma = {sigma:.4}", traces.len()),
    )
}

fn docmc_quadratic_runs() -> Vec<(String, ExperimentOutcome)> {
    let mut out = Vec::new();
    for (name, cfg) in bundled() {
        if cfg.algorithm.name == AlgorithmName::Docmc && matches!(cfg.objective, distopt::harness::config::ObjectiveSpec::Quadratic { .. }) {
            out.push((name, run_experiment(&cfg).unwrap()));
        }
    }
    for seed in 7_u64..=12 {
        let text = format!(
            "schema_version = 1\nname = \"random-docmc-{seed}\"\nseed = {seed}\n\n[graph]\nkind = \"random_balanced\"\nn = 4\nextra_cycles = 2\n\n\
             [objective]\nkind = \"random_quadratic\"\ndim = 2\nm1 = 0.2\nm2 = 2.0\nscale = 1.0\n\n\
             [algorithm]\nname = \"docmc\"\nmax_iter = 40\ntol_grad = 0.0\ntol_edge = 0.0\n\n[init]\nmode = \"consensus\"\nvalue = [0.0]\n"
        );
        out.push((format!("random seed {seed}"), run_experiment(&ExperimentConfig::parse(&text).unwrap()).unwrap()));
    }
    out
}

// 7
fn docmc_superlinear() -> Outcome {
    let mut details = Vec::new();
    let mut passed = true;
    let (mut classified, mut too_short) = (0, 0);
    for (name, out) in docmc_quadratic_runs() {
        let problem = &out.prepared.problem;
        let sol = solve_riccati(&out.prepared.weights, problem.incidence(), DEFAULT_RICCATI_TOL, DEFAULT_RICCATI_MAX_ITER).unwrap();
        let gamma = sol.gamma();
        let rho = spectral_radius(&((gamma + h_star(problem)).try_inverse().unwrap() * gamma));
        let rs = ratios(&out.trace.errors());
        let r1 = rs.iter().map(|&(k, r)| r / rho.powi(k as i32 + 1)).fold(0.0_f64, f64::max);
        let envelope = rs.iter().all(|&(k, r)| r <= r1 * rho.powi(k as i32 + 1));
        let rho_match = out.report.rho.is_some_and(|x| (x - rho).abs() <= 1e-9);
        passed &= rho < 1.0 && r1.is_finite() && envelope && rho_match;
        let class = match (&out.report.rate, &out.report.rate_error) {
            (Some(rate), _) => {
                classified += 1;
                passed &= rate.classification == RateClass::Superlinear;
                rate.classification.name()
            }
            // Below the fit window: reaches the floor in fewer than the
            // required ratios, which the classifier cannot judge.
            (None, Some(e)) if e.starts_with("trace too short") => {
                too_short += 1;
                "too short to classify"
            }
            _ => {
                passed = false;
                "fit failed"
            }
        };
        details.push(format!("{name}: rho {rho:.6} r1 {r1:.3e} {class}"));
    }
    passed &= classified >= 5;
    outcome(passed, format!("{classified} classified, {too_short} below the fit window; {}", details.join("; ")))
}

fn doaoc_runs() -> Vec<(String, ExperimentOutcome)> {
    let mut out = Vec::new();
    for (name, cfg) in bundled() {
        if cfg.algorithm.name == AlgorithmName::Doaoc && cfg.expect.classification.is_some() {
            out.push((name, run_experiment(&cfg).unwrap()));
        }
    }
    let slow = r#"
schema_version = 1
name = "diag4-doaoc"
seed = 0

[graph]
kind = "undirected"
n = 4
edges = [[1, 2], [2, 3], [3, 4], [4, 1]]

[objective]
kind = "quadratic"
a = [[[0.2, 0.0], [0.0, 1.0]], [[0.4, 0.0], [0.0, 0.5]], [[0.3, 0.0], [0.0, 3.0]], [[0.5, 0.0], [0.0, 1.5]]]
b = [[1.0, -1.0], [2.0, 0.5], [-1.0, 1.0], [0.5, 2.0]]

[algorithm]
name = "doaoc"
max_iter = 60
tol_grad = 0.0
tol_edge = 0.0

[init]
mode = "consensus"
value = [0.0]
"#;
    out.push(("diag4".into(), run_experiment(&ExperimentConfig::parse(slow).unwrap()).unwrap()));
    out
}

// 8
fn doaoc_superlinear() -> Outcome {
    let mut details = Vec::new();
    let mut passed = true;
    for (name, out) in doaoc_runs() {
        let problem = &out.prepared.problem;
        let (_, m2) = problem.objectives.bounds();
        let eta = out.report.eta;
        let p = problem.dim();
        let hs = h_star(problem).view((0, 0), (p, p)).into_owned();
        let c = (DMatrix::identity(p, p) - hs * eta).symmetric_eigenvalues().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let rs = ratios(&out.trace.errors());
        let r2 = rs.iter().map(|&(k, r)| r / c.powi(k as i32)).fold(0.0_f64, f64::max);
        let envelope = rs.iter().all(|&(k, r)| r <= r2 * c.powi(k as i32));
        let class = out.report.rate.as_ref().map(|r| r.classification);
        let c_lib = out.report.c.unwrap_or(f64::NAN);
        let c_measured = out.report.c_measured.unwrap_or(f64::NAN);
        let ok = (eta - 1.0 / m2).abs() <= 1e-15
            && c < 1.0
            && (c_lib - c).abs() <= 1e-12
            && (c_measured - c).abs() <= 1e-6
            && r2.is_finite()
            && envelope
            && class == Some(RateClass::Superlinear);
        passed &= ok;
        details.push(format!(
            "{name}: c {c:.6} measured {c_measured:.6} r2 {r2:.3e} {} ({} ratios)",
            class.map_or("unfitted", |c| c.name()),
            rs.len()
        ));
    }
    outcome(passed, details.join("; "))
}

// 9
fn baseline_contrast() -> Outcome {
    let text = |algo: &str, extra: &str| {
        format!(
            "schema_version = 1\nseed = 1\n\n[graph]\nkind = \"cycle\"\nn = 3\n\n[objective]\nkind = \"quadratic\"\n\
             a = [[[0.1]], [[0.2]], [[1.2]]]\nb = [[1.0], [-2.0], [3.0]]\n\n[algorithm]\nname = \"{algo}\"\n{extra}\n\
             tol_grad = 0.0\ntol_edge = 0.0\n\n[init]\nmode = \"consensus\"\nvalue = [0.0]\n"
        )
    };
    let iters = |algo: &str, extra: &str| {
        let out = run_experiment(&ExperimentConfig::parse(&text(algo, extra)).unwrap()).unwrap();
        (out.trace.iterations_to(1e-8), out.trace.iterations())
    };
    let (docmc, _) = iters("docmc", "max_iter = 60");
    let (doaoc, _) = iters("doaoc", "max_iter = 60");
    let cap = 3000;
    let (dgd, dgd_ran) = iters("dgd", &format!("max_iter = {cap}"));
    let (Some(docmc), Some(doaoc)) = (docmc, doaoc) else {
        return outcome(false, "DOCMC or DOAOC did not reach 1e-8");
    };
    // If DGD never reaches the tolerance its count is at least the budget + 1.
    let dgd_bound = dgd.unwrap_or(dgd_ran + 1);
    let fastest = docmc.max(doaoc);
    let shown = dgd.map_or(format!("> {dgd_ran}"), |k| k.to_string());
    outcome(
        dgd_bound >= 5 * fastest,
        format!("iterations to 1e-8: DOCMC {docmc}, DOAOC {doaoc}, DGD {shown} (ratio >= {:.0})", dgd_bound as f64 / fastest as f64),
    )
}

// 10
fn derivative_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let (mut grad_worst, mut hess_worst) = (0.0_f64, 0.0_f64);
    let mut count = 0;
    for (_, cfg) in bundled() {
        let prep = cfg.prepare().unwrap();
        let obj = &prep.problem.objectives;
        let p = obj.dim();
        for i in 0..obj.n() {
            for _ in 0..10 {
                let x = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
                let step = 1e-6 * (x.norm() + 1.0);
                let analytic = obj.gradient(i, &x).unwrap();
                let hess = obj.hessian(i, &x).unwrap();
                let mut fd_grad = DVector::zeros(p);
                let mut fd_hess = DMatrix::zeros(p, p);
                for c in 0..p {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[c] += step;
                    xm[c] -= step;
                    fd_grad[c] = (obj.value(i, &xp).unwrap() - obj.value(i, &xm).unwrap()) / (2.0 * step);
                    let col = (obj.gradient(i, &xp).unwrap() - obj.gradient(i, &xm).unwrap()) / (2.0 * step);
                    fd_hess.set_column(c, &col);
                }
                grad_worst = grad_worst.max((&fd_grad - &analytic).norm() / analytic.norm().max(1e-8));
                hess_worst = hess_worst.max((&fd_hess - &hess).norm() / hess.norm().max(1e-8));
                count += 1;
            }
        }
    }
    outcome(
        grad_worst <= 1e-5 && hess_worst <= 1e-3,
        format!("{count} points, gradient rel. error {grad_worst:.2e}, Hessian rel. error {hess_worst:.2e}"),
    )
}

// 11
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    let configs = bundled();
    for (name, cfg) in &configs {
        let mut bytes = Vec::new();
        for run in 0..2 {
            let out = run_experiment(cfg).unwrap();
            let sub = dir.path().join(format!("{name}-{run}"));
            write_outputs(&out, cfg, &sub).unwrap();
            bytes.push(std::fs::read(sub.join("trace.csv")).unwrap());
        }
        if bytes[0] != bytes[1] {
            differing.push(name.clone());
        }
    }
    outcome(
        differing.is_empty(),
        format!("{} bundled configs run twice, differing traces: {differing:?}", configs.len()),
    )
}

// 12
fn topology() -> Outcome {
    let mut runs: Vec<(AlgorithmName, DirectedGraph, ConvergenceTrace)> = Vec::new();
    for (_, cfg) in bundled() {
        if matches!(cfg.algorithm.name, AlgorithmName::Docmc | AlgorithmName::Doaoc) {
            let out = run_experiment(&cfg).unwrap();
            runs.push((cfg.algorithm.name, out.prepared.problem.graph.clone(), out.trace));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    for _ in 0..3 {
        let problem = random_quadratic_problem(&mut rng, 6, 2);
        let weights = CostWeights::identity(6, 2);
        let x0 = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let mut cfg = fixed_budget(4);
        cfg.consensus = distopt::consensus::ConsensusConfig::linear(3).unwrap();
        runs.push((AlgorithmName::Doaoc, problem.graph.clone(), sim::run_doaoc(&problem, &weights, &cfg, x0.clone()).unwrap()));
        runs.push((AlgorithmName::Docmc, problem.graph.clone(), sim::run_docmc(&problem, &weights, &cfg, x0).unwrap()));
    }
    let (mut doaoc_msgs, mut docmc_msgs, mut violations) = (0, 0, 0);
    for (algo, g, trace) in &runs {
        let adjacency = g.adjacency();
        for m in &trace.messages {
            let bad = match (algo, m.from, m.to) {
                (AlgorithmName::Doaoc, Node::Agent(i), Node::Agent(j)) => adjacency[(i, j)] == 0.0 && adjacency[(j, i)] == 0.0,
                (AlgorithmName::Doaoc, _, _) => true,
                (_, Node::Agent(_), Node::Agent(_)) => true,
                _ => false,
            };
            violations += bad as usize;
        }
        match algo {
            AlgorithmName::Doaoc => doaoc_msgs += trace.messages.len(),
            _ => docmc_msgs += trace.messages.len(),
        }
    }
    outcome(
        violations == 0 && doaoc_msgs > 0 && docmc_msgs > 0,
        format!("{} runs, {doaoc_msgs} DOAOC and {docmc_msgs} DOCMC messages, {violations} violations", runs.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("M-limit", m_limit),
        ("Riccati residual", riccati_residual),
        ("FBDE consistency", fbde),
        ("closed-form equivalence", closed_form),
        ("spectral precondition", spectral_precondition),
        ("consensus contraction", consensus_contraction),
        ("DOCMC superlinearity", docmc_superlinear),
        ("DOAOC superlinearity", doaoc_superlinear),
        ("baseline contrast", baseline_contrast),
        ("derivative checks", derivative_checks),
        ("determinism", determinism),
        ("topology discipline", topology),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += !o.passed as usize;
        println!("{} {:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
