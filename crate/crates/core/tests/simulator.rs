use distopt::algorithms::{AlgorithmConfig, StepSchedule};
use distopt::consensus::ConsensusConfig;
use distopt::control::CostWeights;
use distopt::graph::DirectedGraph;
use distopt::harness::experiment::fit_rows;
use distopt::harness::rate::RateClass;
use distopt::objective::{ObjectiveSet, QuadraticObjective};
use distopt::sim::message::Node;
use distopt::sim::{self, CentralizedKind, Problem, SimConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar_quadratics(a: &[f64], b: &[f64]) -> ObjectiveSet {
    let items = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| QuadraticObjective::new(DMatrix::from_element(1, 1, ai), DVector::from_element(1, bi)).unwrap())
        .collect();
    ObjectiveSet::quadratics(items).unwrap()
}

fn cycle3() -> Problem {
    Problem::new(DirectedGraph::cycle(3).unwrap(), scalar_quadratics(&[0.1, 0.2, 1.2], &[1.0, -2.0, 3.0])).unwrap()
}

fn random_problem(seed: u64, n: usize, p: usize) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DirectedGraph::random_balanced(n, 2, &mut rng).unwrap();
    let items = (0..n).map(|_| QuadraticObjective::random(p, 0.5, 2.0, 1.0, &mut rng).unwrap()).collect();
    Problem::new(g, ObjectiveSet::quadratics(items).unwrap()).unwrap()
}

fn budget(max_iter: usize) -> SimConfig {
    SimConfig {
        algorithm: AlgorithmConfig {
            max_iter,
            tol_grad: 0.0,
            tol_edge: 0.0,
            ..AlgorithmConfig::default()
        },
        ..SimConfig::default()
    }
}

fn consensus_start(problem: &Problem, value: f64) -> DVector<f64> {
    DVector::from_element(problem.n() * problem.dim(), value)
}

/// Minimizer of `Σ ½(x − b_i)ᵀA_i(x − b_i)` from the normal equations.
fn normal_equation_minimizer(problem: &Problem) -> DVector<f64> {
    let p = problem.dim();
    let mut a = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    let zero = DVector::zeros(p);
    for i in 0..problem.n() {
        let hi = problem.objectives.hessian(i, &zero).unwrap();
        let gi = problem.objectives.gradient(i, &zero).unwrap();
        a += &hi;
        rhs -= gi;
    }
    a.lu().solve(&rhs).unwrap()
}

#[test]
fn docmc_at_optimum_stops_before_any_round() {
    let problem = cycle3();
    let mut cfg = budget(10);
    cfg.algorithm.tol_grad = 1e-9;
    cfg.algorithm.tol_edge = 1e-9;
    let trace = sim::run_docmc(&problem, &CostWeights::identity(3, 1), &cfg, problem.stacked_optimum()).unwrap();
    assert!(trace.converged);
    assert_eq!(trace.iterations(), 0);
    assert_eq!(trace.total_messages(), 0);
}

#[test]
fn docmc_three_cycle_reaches_optimum_within_thirty_iterations() {
    let problem = cycle3();
    assert!((problem.x_star[0] - 3.3 / 1.5).abs() < 1e-12);
    let trace = sim::run_docmc(&problem, &CostWeights::identity(3, 1), &budget(30), consensus_start(&problem, 0.0)).unwrap();
    let k = trace.iterations_to(1e-8).expect("error reaches 1e-8");
    assert!(k <= 30, "took {k} iterations");
    for v in trace.final_state().iter() {
        assert!((v - 2.2).abs() <= 1e-8);
    }
}

#[test]
fn docmc_star_mode_matches_centralized_reduction() {
    let problem = random_problem(3, 4, 2);
    let weights = CostWeights::uniform(4, 2, 1.0, 2.0, 1.0).unwrap();
    let mut cfg = budget(25);
    cfg.star = true;
    let x0 = consensus_start(&problem, 0.5);
    let star = sim::run_docmc(&problem, &weights, &cfg, x0.clone()).unwrap();
    let central = sim::run_centralized(&problem, &weights, CentralizedKind::Exact, &cfg, x0).unwrap();
    assert_eq!(star.rows.len(), central.rows.len());
    for (a, b) in star.states.iter().zip(&central.states) {
        assert!((a - b).amax() <= 1e-12);
    }
    assert_eq!(star.agent_to_agent_messages(), 0);
}

#[test]
fn doaoc_identical_starts_keep_edge_errors_zero() {
    let problem = random_problem(7, 5, 2);
    let trace = sim::run_doaoc(&problem, &CostWeights::identity(5, 2), &budget(15), consensus_start(&problem, -0.3)).unwrap();
    for row in &trace.rows {
        assert_eq!(row.edge_norm, 0.0);
        assert!(row.consensus_err <= 1e-15);
    }
    for x in &trace.states {
        let blocks: Vec<_> = x.as_slice().chunks(2).collect();
        assert!(blocks.iter().all(|b| b == &blocks[0]));
    }
}

#[test]
fn doaoc_four_agents_converges_with_decreasing_ratios() {
    let problem = random_problem(21, 4, 2);
    let (_, m2) = problem.objectives.bounds();
    let mut cfg = budget(60);
    cfg.algorithm.eta = 1.0 / m2;
    cfg.algorithm.tol_grad = 1e-10;
    cfg.algorithm.tol_edge = 1e-10;
    let trace = sim::run_doaoc(&problem, &CostWeights::identity(4, 2), &cfg, consensus_start(&problem, 0.0)).unwrap();
    assert!(trace.converged);
    let errors: Vec<f64> = trace.errors().into_iter().filter(|&e| e > 1e-11).collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[1] / w[0]).collect();
    assert!(ratios.len() >= 5);
    for w in ratios.windows(2) {
        assert!(w[1] < w[0], "ratios {ratios:?}");
    }
}

#[test]
fn doaoc_linear_consensus_settles_near_optimum_as_rounds_grow() {
    let problem = Problem::new(
        DirectedGraph::parse(include_str!("../configs/ring4.graph")).unwrap(),
        random_problem(4, 4, 2).objectives,
    )
    .unwrap();
    let weights = CostWeights::identity(4, 2);
    let x0 = consensus_start(&problem, 0.0);
    let (_, m2) = problem.objectives.bounds();
    let run = |consensus: ConsensusConfig| {
        let mut cfg = budget(40);
        cfg.algorithm.eta = 1.0 / m2;
        cfg.consensus = consensus;
        sim::run_doaoc(&problem, &weights, &cfg, x0.clone()).unwrap()
    };
    let exact = run(ConsensusConfig::exact());
    assert!(exact.iterations_to(1e-8).is_some());
    // Finite mixing leaves the averaged gradients slightly apart, so the
    // iterate stalls at a distance that shrinks with the number of rounds.
    let final_error = |rounds| *run(ConsensusConfig::linear(rounds).unwrap()).errors().last().unwrap();
    let (e20, e40, e80) = (final_error(20), final_error(40), final_error(80));
    assert!(e20 > e40 && e40 > e80, "{e20:e} {e40:e} {e80:e}");
    assert!(e80 < 1e-8);
    assert!(final_error(1) > 1e-3);
}

#[test]
fn dgd_zero_step_is_pure_averaging() {
    let problem = random_problem(5, 5, 2);
    let mut cfg = budget(400);
    cfg.algorithm.dgd_schedule = StepSchedule::Constant { eta: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
    let mean0 = problem.mean_state(&x0);
    let trace = sim::run_dgd(&problem, &cfg, x0).unwrap();
    let x = trace.final_state();
    for i in 0..5 {
        assert!((x.rows(2 * i, 2) - &mean0).amax() < 1e-10);
    }
    assert!((problem.mean_state(x) - mean0).amax() < 1e-12);
}

#[test]
fn dgd_constant_step_settles_in_a_neighborhood() {
    let problem = cycle3();
    let mut cfg = budget(600);
    cfg.algorithm.dgd_schedule = StepSchedule::Constant { eta: 0.1 };
    let trace = sim::run_dgd(&problem, &cfg, consensus_start(&problem, 0.0)).unwrap();
    let e = trace.errors();
    let last = e[e.len() - 1];
    assert!(last < e[0]);
    assert!(last > 1e-6, "constant-step DGD should not be exact, got {last:e}");
    assert!((e[e.len() - 50] - last).abs() < 1e-6 * (1.0 + last));
}

#[test]
fn dgd_harmonic_schedule_is_sublinear() {
    let problem = cycle3();
    let trace = sim::run_dgd(&problem, &budget(500), consensus_start(&problem, 0.0)).unwrap();
    let e = trace.errors();
    assert!(e[e.len() - 1] < e[0]);
    let report = fit_rows(&trace.rows, None).unwrap();
    assert_eq!(report.classification, RateClass::Sublinear);
}

#[test]
fn runs_are_deterministic() {
    let problem = random_problem(9, 4, 2);
    let weights = CostWeights::identity(4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x0 = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
    let mut cfg = budget(20);
    cfg.consensus = ConsensusConfig::linear(3).unwrap();
    for _ in 0..2 {
        let a = sim::run_doaoc(&problem, &weights, &cfg, x0.clone()).unwrap();
        let b = sim::run_doaoc(&problem, &weights, &cfg, x0.clone()).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.messages, b.messages);
        let a = sim::run_docmc(&problem, &weights, &cfg, x0.clone()).unwrap();
        let b = sim::run_docmc(&problem, &weights, &cfg, x0.clone()).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }
}

#[test]
fn message_traffic_respects_topology() {
    let problem = random_problem(13, 6, 2);
    let weights = CostWeights::identity(6, 2);
    let x0 = consensus_start(&problem, 1.0);
    for consensus in [ConsensusConfig::exact(), ConsensusConfig::linear(4).unwrap()] {
        let mut cfg = budget(5);
        cfg.consensus = consensus;
        let trace = sim::run_doaoc(&problem, &weights, &cfg, x0.clone()).unwrap();
        assert!(trace.total_messages() > 0);
        for m in &trace.messages {
            match (m.from, m.to) {
                (Node::Agent(i), Node::Agent(j)) => assert!(problem.graph.adjacent(i, j), "{i} -> {j}"),
                other => panic!("unexpected endpoints {other:?}"),
            }
        }
    }
    let trace = sim::run_docmc(&problem, &weights, &budget(5), x0).unwrap();
    assert!(trace.total_messages() > 0);
    assert_eq!(trace.agent_to_agent_messages(), 0);
}

#[test]
fn row_counters_partition_the_message_log() {
    let problem = random_problem(17, 4, 3);
    let trace = sim::run_doaoc(&problem, &CostWeights::identity(4, 3), &budget(6), consensus_start(&problem, 0.0)).unwrap();
    assert_eq!(trace.rows[0].msgs, 0);
    assert_eq!(trace.rows[0].bytes, 0);
    assert_eq!(trace.rows.iter().map(|r| r.msgs).sum::<usize>(), trace.total_messages());
    assert_eq!(trace.rows.iter().map(|r| r.bytes).sum::<usize>(), trace.total_bytes());
    for (k, r) in trace.rows.iter().enumerate() {
        assert_eq!(r.k, k);
    }
}

#[test]
fn reference_minimizer_matches_normal_equations() {
    for seed in 0..5 {
        let problem = random_problem(seed, 4, 3);
        assert!((normal_equation_minimizer(&problem) - &problem.x_star).amax() < 1e-10);
    }
}

#[test]
fn docmc_with_balanced_weights_freezes_disagreement() {
    // With Q = R = I the disagreement feedback fades before agents agree.
    let problem = cycle3();
    let x0 = DVector::from_vec(vec![0.0, 1.0, -1.0]);
    let trace = sim::run_docmc(&problem, &CostWeights::identity(3, 1), &budget(60), x0.clone()).unwrap();
    let rows = &trace.rows;
    let last = rows[rows.len() - 1].consensus_err;
    let ratio = last / rows[rows.len() - 2].consensus_err;
    assert!(last > 1e-5, "{last:e}");
    assert!(ratio > 0.99, "per-step contraction {ratio}");
    let strong = CostWeights::uniform(3, 1, 100.0, 3.0, 1.0).unwrap();
    let trace = sim::run_docmc(&problem, &strong, &budget(40), x0).unwrap();
    assert!(trace.iterations_to(1e-10).is_some());
}
