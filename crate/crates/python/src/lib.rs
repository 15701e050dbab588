//! Python bindings: graphs, cost weights and the Riccati solution, rate
//! fitting, and configured experiment runs.

use distopt::control::{self, CostWeights, RiccatiSolution};
use distopt::graph::DirectedGraph;
use distopt::harness::config::ExperimentConfig;
use distopt::harness::experiment::{self, ExperimentOutcome};
use distopt::harness::rate::{self, Envelope, RateReport};
use distopt::harness::selftest;
use distopt::Error;
use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: Error) -> PyErr {
    let msg = err.to_string();
    match distopt::harness::exit_code(&err) {
        2 => PyValueError::new_err(msg),
        3 => PyArithmeticError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Weighted directed communication graph. Agent indices are 0-based here;
/// the text format is 1-based.
#[pyclass(name = "Graph", module = "pydistopt", frozen)]
struct PyGraph {
    inner: DirectedGraph,
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        Ok(Self {
            inner: DirectedGraph::new(n, edges).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn cycle(n: usize) -> PyResult<Self> {
        Ok(Self {
            inner: DirectedGraph::cycle(n).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn undirected(n: usize, pairs: Vec<(usize, usize)>) -> PyResult<Self> {
        Ok(Self {
            inner: DirectedGraph::undirected(n, &pairs).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: DirectedGraph::parse(text).map_err(to_py)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.inner.edges().iter().map(|e| (e.from, e.to, e.weight)).collect()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    /// `(balanced, strongly_connected, witness)`.
    fn validate(&self) -> (bool, bool, Option<String>) {
        let d = self.inner.validate();
        (d.balanced, d.strongly_connected, d.witness)
    }

    fn laplacian(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.laplacian())
    }

    fn incidence(&self) -> Vec<Vec<f64>> {
        rows(self.inner.incidence().matrix())
    }

    fn mixing_matrix(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.mixing_matrix().map_err(to_py)?))
    }

    fn __repr__(&self) -> String {
        format!("Graph(n={}, edges={})", self.inner.n(), self.inner.edge_count())
    }
}

/// Per-agent scalar multiples of the identity for `Q_i`, `R_i`, `H_i`.
#[pyclass(name = "Weights", module = "pydistopt", frozen)]
struct PyWeights {
    inner: CostWeights,
}

#[pymethods]
impl PyWeights {
    #[new]
    fn new(dim: usize, q: Vec<f64>, r: Vec<f64>, h: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: CostWeights::scalar(dim, &q, &r, &h).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n, dim, q=1.0, r=1.0, h=1.0))]
    fn uniform(n: usize, dim: usize, q: f64, r: f64, h: f64) -> PyResult<Self> {
        Ok(Self {
            inner: CostWeights::uniform(n, dim, q, r, h).map_err(to_py)?,
        })
    }
}

/// Stable Riccati solution on a graph's edge errors.
#[pyclass(name = "Riccati", module = "pydistopt", frozen)]
struct PyRiccati {
    inner: RiccatiSolution,
}

#[pymethods]
impl PyRiccati {
    #[new]
    #[pyo3(signature = (graph, weights, tol=control::DEFAULT_RICCATI_TOL, max_iter=control::DEFAULT_RICCATI_MAX_ITER))]
    fn new(graph: &PyGraph, weights: &PyWeights, tol: f64, max_iter: usize) -> PyResult<Self> {
        let inner = control::solve_riccati(&weights.inner, &graph.inner.incidence(), tol, max_iter).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.inner.residual
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    fn p(&self) -> Vec<Vec<f64>> {
        rows(self.inner.p())
    }

    fn gamma(&self) -> Vec<Vec<f64>> {
        rows(self.inner.gamma())
    }

    fn m_limit(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.m_limit())
    }

    /// `‖M(l) − (1/n) 1 1ᵀ‖_max`.
    fn m_limit_distance(&self, l: usize) -> f64 {
        self.inner.m_limit_distance(l)
    }
}

/// Classification and envelope of an error sequence.
#[pyclass(name = "RateReport", module = "pydistopt", frozen)]
struct PyRateReport {
    inner: RateReport,
}

#[pymethods]
impl PyRateReport {
    #[getter]
    fn classification(&self) -> &'static str {
        self.inner.classification.name()
    }

    /// Geometric-mean ratio for a linear classification.
    #[getter]
    fn linear_rate(&self) -> Option<f64> {
        match self.inner.classification {
            rate::RateClass::Linear { c } => Some(c),
            _ => None,
        }
    }

    #[getter]
    fn slope(&self) -> f64 {
        self.inner.slope
    }

    #[getter]
    fn envelope_constant(&self) -> Option<f64> {
        self.inner.envelope_constant
    }

    #[getter]
    fn sigma(&self) -> Option<f64> {
        self.inner.sigma
    }

    #[getter]
    fn ratios(&self) -> Vec<(usize, f64)> {
        self.inner.ratios.clone()
    }

    fn __repr__(&self) -> String {
        format!("RateReport({})", self.inner.classification.name())
    }
}

/// Fit the convergence class of `errors`; `rho` or `c` selects the
/// envelope whose constant is reported.
#[pyfunction]
#[pyo3(signature = (errors, consensus=None, rho=None, c=None))]
fn fit_rate(errors: Vec<f64>, consensus: Option<Vec<f64>>, rho: Option<f64>, c: Option<f64>) -> PyResult<PyRateReport> {
    let envelope = match (rho, c) {
        (Some(_), Some(_)) => return Err(PyValueError::new_err("give at most one of rho and c")),
        (Some(rho), None) => Some(Envelope::Rho { rho }),
        (None, Some(c)) => Some(Envelope::C { c }),
        (None, None) => None,
    };
    let inner = rate::fit_rate(&errors, consensus.as_deref(), envelope).map_err(to_py)?;
    Ok(PyRateReport { inner })
}

/// Outcome of a configured experiment.
#[pyclass(name = "Run", module = "pydistopt", frozen)]
struct PyRun {
    outcome: ExperimentOutcome,
    config: ExperimentConfig,
}

#[pymethods]
impl PyRun {
    #[getter]
    fn converged(&self) -> bool {
        self.outcome.trace.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.outcome.trace.iterations()
    }

    #[getter]
    fn errors(&self) -> Vec<f64> {
        self.outcome.trace.errors()
    }

    #[getter]
    fn x_star(&self) -> Vec<f64> {
        self.outcome.prepared.problem.x_star.iter().copied().collect()
    }

    #[getter]
    fn final_state(&self) -> Vec<f64> {
        self.outcome.trace.final_state().iter().copied().collect()
    }

    #[getter]
    fn classification(&self) -> Option<&'static str> {
        self.outcome.report.rate.as_ref().map(|r| r.classification.name())
    }

    #[getter]
    fn property_failures(&self) -> Vec<String> {
        self.outcome.report.property_failures.clone()
    }

    fn trace_csv(&self) -> String {
        self.outcome.trace.to_csv()
    }

    fn report_json(&self) -> String {
        serde_json::to_string(&self.outcome.report).expect("report serializes")
    }

    /// Write `trace.csv`, `meta.json` and `report.json` into `out`.
    fn write(&self, out: std::path::PathBuf) -> PyResult<()> {
        experiment::write_outputs(&self.outcome, &self.config, &out).map_err(to_py)
    }
}

/// Run an experiment from TOML text. Relative graph paths resolve against
/// `base_dir`.
#[pyfunction]
#[pyo3(signature = (config, seed=None, base_dir=None))]
fn run(py: Python<'_>, config: &str, seed: Option<u64>, base_dir: Option<std::path::PathBuf>) -> PyResult<PyRun> {
    let mut cfg = ExperimentConfig::parse(config).map_err(to_py)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(dir) = base_dir {
        cfg.base_dir = dir;
    }
    let outcome = py.detach(|| experiment::run_experiment(&cfg)).map_err(to_py)?;
    Ok(PyRun { outcome, config: cfg })
}

/// Run the bundled invariant suite; returns `(name, passed, detail)` rows.
#[pyfunction]
#[pyo3(signature = (seed=2024))]
fn run_selftest(py: Python<'_>, seed: u64) -> PyResult<Vec<(String, bool, String)>> {
    let report = py.detach(|| selftest::run(seed)).map_err(to_py)?;
    Ok(report.checks.into_iter().map(|c| (c.name, c.passed, c.detail)).collect())
}

#[pymodule]
fn pydistopt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyWeights>()?;
    m.add_class::<PyRiccati>()?;
    m.add_class::<PyRateReport>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(fit_rate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_selftest, m)?)?;
    m.add("CSV_HEADER", distopt::sim::trace::CSV_HEADER)?;
    Ok(())
}
