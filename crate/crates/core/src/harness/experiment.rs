//! Running configured experiments and writing their artifacts.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::algorithms;
use crate::control::{self, RiccatiSolution};
use crate::error::{Error, Result};
use crate::harness::config::{AlgorithmName, ExperimentConfig, Prepared};
use crate::harness::rate::{fit_rate, Envelope, RateReport};
use crate::linalg;
use crate::sim::message::Node;
use crate::sim::trace::{ConvergenceTrace, TraceRow};
use crate::sim::{self, CentralizedKind};

/// Error level used for iterations-to-tolerance comparisons.
pub const COMPARE_TOL: f64 = 1e-8;
/// Allowed gap between `‖I − ηh‖` at the final iterate and at `x*`.
pub const C_MATCH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct RiccatiSummary {
    pub residual: f64,
    pub asymmetry: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub algorithm: String,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub final_error: f64,
    pub iterations_to_tol: Option<usize>,
    pub total_messages: usize,
    pub total_bytes: usize,
    pub agent_to_agent_messages: usize,
    pub non_adjacent_messages: usize,
    pub eta: f64,
    pub riccati: Option<RiccatiSummary>,
    /// `ρ((Γ_P + h*)⁻¹Γ_P)`.
    pub rho: Option<f64>,
    /// `‖I − ηh*‖`.
    pub c: Option<f64>,
    /// `‖I − ηh‖` with `h` averaged at the final iterate.
    pub c_measured: Option<f64>,
    /// `‖I − η(h* + BᵀPB)‖`.
    pub g_norm: Option<f64>,
    pub rate: Option<RateReport>,
    pub rate_error: Option<String>,
    pub property_failures: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub trace: ConvergenceTrace,
    pub report: ExperimentReport,
    pub prepared: Prepared,
}

/// Fit the rate of trace rows against an optional envelope.
pub fn fit_rows(rows: &[TraceRow], envelope: Option<Envelope>) -> Result<RateReport> {
    let errors: Vec<f64> = rows.iter().map(|r| r.err_to_opt).collect();
    let consensus: Vec<f64> = rows.iter().map(|r| r.consensus_err).collect();
    fit_rate(&errors, Some(&consensus), envelope)
}

fn mean_hessian_at(prep: &Prepared, x: &nalgebra::DVector<f64>) -> Result<DMatrix<f64>> {
    let hs = prep.problem.objectives.local_hessians(x)?;
    let mut acc = DMatrix::zeros(prep.problem.dim(), prep.problem.dim());
    for h in &hs {
        acc += h;
    }
    Ok(linalg::symmetrize(&(acc / hs.len() as f64)))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let prep = cfg.prepare()?;
    let problem = &prep.problem;
    let (n, p) = (problem.n(), problem.dim());
    let eta = prep.sim.algorithm.eta;
    let algo = cfg.algorithm.name;

    let riccati: Option<RiccatiSolution> = match algo {
        AlgorithmName::Docmc if prep.sim.star => Some(RiccatiSolution::without_edge_cost(&prep.weights, problem.incidence())?),
        AlgorithmName::Docmc | AlgorithmName::Doaoc | AlgorithmName::ConsensusOnly => Some(control::solve_riccati(
            &prep.weights,
            problem.incidence(),
            control::DEFAULT_RICCATI_TOL,
            control::DEFAULT_RICCATI_MAX_ITER,
        )?),
        AlgorithmName::Centralized if cfg.algorithm.centralized == CentralizedKind::Exact => {
            Some(RiccatiSolution::without_edge_cost(&prep.weights, problem.incidence())?)
        }
        _ => None,
    };

    let x0 = prep.x0.clone();
    let trace = match algo {
        AlgorithmName::Docmc => sim::run_docmc(problem, &prep.weights, &prep.sim, x0)?,
        AlgorithmName::Doaoc => sim::run_doaoc(problem, &prep.weights, &prep.sim, x0)?,
        AlgorithmName::Dgd => sim::run_dgd(problem, &prep.sim, x0)?,
        AlgorithmName::Centralized => sim::run_centralized(problem, &prep.weights, cfg.algorithm.centralized, &prep.sim, x0)?,
        AlgorithmName::ConsensusOnly => sim::run_consensus_only(problem, &prep.weights, &prep.sim, x0)?,
    };

    let h_star = mean_hessian_at(&prep, &problem.stacked_optimum())?;
    let h_star_stacked = linalg::block_diag(&vec![h_star.clone(); n]);
    let uses_eta = matches!(algo, AlgorithmName::Doaoc) || (algo == AlgorithmName::Centralized && cfg.algorithm.centralized == CentralizedKind::Eta);
    let rho = match (&riccati, algo) {
        (Some(r), AlgorithmName::Docmc) | (Some(r), AlgorithmName::Centralized) => Some(algorithms::docmc_rate(r, &h_star_stacked)?),
        _ => None,
    };
    let (c, c_measured) = if uses_eta {
        let h_final = mean_hessian_at(&prep, trace.final_state())?;
        (Some(algorithms::doaoc_rate(&h_star, eta)), Some(algorithms::doaoc_rate(&h_final, eta)))
    } else {
        (None, None)
    };
    let g_norm = match (&riccati, algo) {
        (Some(r), AlgorithmName::Doaoc) => {
            let m = DMatrix::identity(n * p, n * p) - (&h_star_stacked + r.btpb()) * eta;
            Some(linalg::sym_spectral_norm(&m))
        }
        _ => None,
    };
    let envelope = rho.map(|rho| Envelope::Rho { rho }).or(c.map(|c| Envelope::C { c }));
    let (rate, rate_error) = match fit_rows(&trace.rows, envelope) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let non_adjacent = trace
        .messages
        .iter()
        .filter(|m| match (m.from, m.to) {
            (Node::Agent(i), Node::Agent(j)) => !problem.graph.adjacent(i, j),
            _ => false,
        })
        .count();
    let agent_to_agent = trace.agent_to_agent_messages();

    let mut failures = Vec::new();
    if non_adjacent > 0 {
        failures.push(format!("{non_adjacent} messages between non-adjacent agents"));
    }
    if matches!(algo, AlgorithmName::Docmc | AlgorithmName::ConsensusOnly) && agent_to_agent > 0 {
        failures.push(format!("{agent_to_agent} agent-to-agent messages in a server run"));
    }
    if let Some(expected) = &cfg.expect.classification {
        match &rate {
            Some(r) if r.classification.name() == expected => {}
            Some(r) => failures.push(format!("expected {expected} convergence, measured {}", r.classification.name())),
            None => failures.push(format!("expected {expected} convergence, rate fit failed")),
        }
    }
    let final_error = trace.rows.last().map_or(f64::NAN, |r| r.err_to_opt);
    if let (Some(c), Some(cm)) = (c, c_measured) {
        if final_error <= COMPARE_TOL && (c - cm).abs() > C_MATCH_TOL {
            failures.push(format!("measured c = {cm} differs from c(x*) = {c}"));
        }
    }

    let report = ExperimentReport {
        name: cfg.name.clone().unwrap_or_else(|| algo.as_str().to_string()),
        algorithm: trace.algorithm.clone(),
        seed: cfg.seed,
        iterations: trace.iterations(),
        converged: trace.converged,
        final_error,
        iterations_to_tol: trace.iterations_to(COMPARE_TOL),
        total_messages: trace.total_messages(),
        total_bytes: trace.total_bytes(),
        agent_to_agent_messages: agent_to_agent,
        non_adjacent_messages: non_adjacent,
        eta,
        riccati: riccati.as_ref().map(|r| RiccatiSummary {
            residual: r.residual,
            asymmetry: r.asymmetry,
            iterations: r.iterations,
        }),
        rho,
        c,
        c_measured,
        g_norm,
        rate,
        rate_error,
        property_failures: failures,
    };
    Ok(ExperimentOutcome { trace, report, prepared: prep })
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a ExperimentConfig,
    config_toml: String,
    graph: String,
    x_star: Vec<f64>,
    f_star: f64,
    riccati: &'a Option<RiccatiSummary>,
    envelope: Option<Envelope>,
    wall_clock_seconds: f64,
    round_seconds: &'a [f64],
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        context: format!("writing {}", path.display()),
        source,
    })
}

/// Write `trace.csv`, `meta.json` and `report.json` into `dir`.
pub fn write_outputs(outcome: &ExperimentOutcome, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        context: format!("creating {}", dir.display()),
        source,
    })?;
    write(&dir.join("trace.csv"), &outcome.trace.to_csv())?;
    let meta = Metadata {
        tool: "distopt",
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg,
        config_toml: cfg.to_toml(),
        graph: outcome.prepared.problem.graph.to_text(),
        x_star: outcome.prepared.problem.x_star.iter().copied().collect(),
        f_star: outcome.prepared.problem.f_star,
        riccati: &outcome.report.riccati,
        envelope: outcome.report.rate.as_ref().and_then(|r| r.envelope).or_else(|| {
            outcome
                .report
                .rho
                .map(|rho| Envelope::Rho { rho })
                .or(outcome.report.c.map(|c| Envelope::C { c }))
        }),
        wall_clock_seconds: outcome.trace.round_seconds.iter().sum(),
        round_seconds: &outcome.trace.round_seconds,
    };
    write(&dir.join("meta.json"), &serde_json::to_string_pretty(&meta).expect("metadata serializes"))?;
    write(&dir.join("report.json"), &serde_json::to_string_pretty(&outcome.report).expect("report serializes"))?;
    Ok(())
}

/// Re-fit a saved run directory; reads `trace.csv` and the envelope in
/// `meta.json`.
pub fn refit(dir: &Path) -> Result<RateReport> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(|source| Error::Io {
            context: format!("reading {}", path.display()),
            source,
        })
    };
    let rows = crate::sim::trace::parse_csv(&read("trace.csv")?)?;
    let envelope = match read("meta.json") {
        Ok(text) => {
            let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::config("meta.json", e.to_string()))?;
            match v.get("envelope") {
                Some(env) if !env.is_null() => {
                    Some(serde_json::from_value::<Envelope>(env.clone()).map_err(|e| Error::config("meta.json.envelope", e.to_string()))?)
                }
                _ => None,
            }
        }
        Err(_) => None,
    };
    fit_rows(&rows, envelope)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub name: String,
    pub algorithm: String,
    pub iterations_to_tol: Option<usize>,
    pub iterations: usize,
    pub messages: usize,
    pub bytes: usize,
    pub classification: Option<String>,
    pub rho: Option<f64>,
    pub c: Option<f64>,
}

pub const COMPARE_HEADER: &str = "name,algorithm,iters_to_1e-8,iterations,msgs,bytes,classification,rho,c";

/// Run every config (with an optional shared seed) and tabulate costs.
pub fn compare(configs: &[ExperimentConfig], seed: Option<u64>) -> Result<Vec<CompareRow>> {
    configs
        .iter()
        .map(|cfg| {
            let mut cfg = cfg.clone();
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = run_experiment(&cfg)?;
            let r = out.report;
            Ok(CompareRow {
                name: r.name,
                algorithm: r.algorithm,
                iterations_to_tol: r.iterations_to_tol,
                iterations: r.iterations,
                messages: r.total_messages,
                bytes: r.total_bytes,
                classification: r.rate.map(|x| x.classification.name().to_string()),
                rho: r.rho,
                c: r.c,
            })
        })
        .collect()
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
    let mut out = format!("{COMPARE_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.name,
            r.algorithm,
            r.iterations_to_tol.map_or(String::new(), |k| k.to_string()),
            r.iterations,
            r.messages,
            r.bytes,
            r.classification.clone().unwrap_or_default(),
            opt(r.rho),
            opt(r.c)
        ));
    }
    out
}
