//! TOML experiment configuration (schema version 1).

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmConfig, StepSchedule};
use crate::consensus::{ConsensusConfig, ConsensusMode};
use crate::control::CostWeights;
use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::objective::{LogisticObjective, ObjectiveSet, QuadraticObjective};
use crate::sim::{CentralizedKind, Initialization, Problem, SimConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub graph: GraphSpec,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub weights: WeightSpec,
    pub algorithm: AlgorithmSpec,
    #[serde(default = "default_init")]
    pub init: Initialization,
    #[serde(default)]
    pub consensus: ConsensusSpec,
    #[serde(default)]
    pub expect: Expectation,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Tagged sections are buffered during deserialization, so their errors
/// only carry the section path. The offending field is the one whose
/// removal changes the error.
fn tagged_culprit(table: &toml::Table, path: &str, reason: &str) -> Option<String> {
    let segments: Vec<&str> = path.split('.').collect();
    let section = segments.iter().try_fold(table, |t, seg| t.get(*seg)?.as_table())?;
    if !section.contains_key("kind") && !section.contains_key("mode") {
        return None;
    }
    for field in section.keys().filter(|k| *k != "kind" && *k != "mode") {
        let mut probe = table.clone();
        let mut cursor = &mut probe;
        for seg in &segments {
            cursor = cursor.get_mut(*seg)?.as_table_mut()?;
        }
        cursor.remove(field);
        match serde_path_to_error::deserialize::<_, ExperimentConfig>(probe) {
            Err(e) if e.path().to_string() == path && e.inner().to_string() == reason => continue,
            _ => return Some(field.clone()),
        }
    }
    None
}

fn default_init() -> Initialization {
    Initialization::Random { scale: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    /// Bidirectional ring `1 ↔ 2 ↔ … ↔ n ↔ 1`.
    Cycle { n: usize },
    /// Bidirectional unit-weight edges, 1-based.
    Undirected { n: usize, edges: Vec<[usize; 2]> },
    /// Graph text file (`n <count>` then `edge <i> <j> <weight>`).
    File { path: PathBuf },
    /// The same format inline.
    Inline { text: String },
    RandomBalanced { n: usize, extra_cycles: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    /// `f_i(x) = ½(x − b_i)ᵀA_i(x − b_i)`; `a[i]` is a list of rows.
    Quadratic { a: Vec<Vec<Vec<f64>>>, b: Vec<Vec<f64>> },
    RandomQuadratic { dim: usize, m1: f64, m2: f64, scale: f64 },
    Logistic { dim: usize, samples: usize, lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAgent {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerAgent {
    fn expand(&self, n: usize, key: &str) -> Result<Vec<f64>> {
        match self {
            PerAgent::Uniform(v) => Ok(vec![*v; n]),
            PerAgent::Each(v) if v.len() == n => Ok(v.clone()),
            PerAgent::Each(v) => Err(Error::config(key, format!("expected {n} entries, got {}", v.len()))),
        }
    }
}

/// Scalar multiples of the identity per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub q: PerAgent,
    pub r: PerAgent,
    pub h: PerAgent,
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self {
            q: PerAgent::Uniform(1.0),
            r: PerAgent::Uniform(1.0),
            h: PerAgent::Uniform(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Dgd,
    Docmc,
    Doaoc,
    Centralized,
    ConsensusOnly,
}

impl AlgorithmName {
    pub fn as_str(&self) -> &'static str {
        match self {
            AlgorithmName::Dgd => "dgd",
            AlgorithmName::Docmc => "docmc",
            AlgorithmName::Doaoc => "doaoc",
            AlgorithmName::Centralized => "centralized",
            AlgorithmName::ConsensusOnly => "consensus_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub name: AlgorithmName,
    /// DOAOC step; defaults to `1/m2`.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub inner_cap: Option<usize>,
    #[serde(default)]
    pub star: bool,
    #[serde(default = "default_centralized")]
    pub centralized: CentralizedKind,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol_grad: f64,
    #[serde(default = "default_tol")]
    pub tol_edge: f64,
    #[serde(default = "default_schedule")]
    pub dgd_schedule: StepSchedule,
}

fn default_centralized() -> CentralizedKind {
    CentralizedKind::Exact
}
fn default_max_iter() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-9
}
fn default_schedule() -> StepSchedule {
    StepSchedule::Harmonic { c: 1.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConsensusSpec {
    #[serde(default)]
    pub mode: ConsensusMode,
    /// Linear-mode rounds; defaults to 10 × the undirected diameter.
    #[serde(default)]
    pub rounds: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    /// `superlinear`, `linear` or `sublinear`.
    #[serde(default)]
    pub classification: Option<String>,
}

/// Everything needed to run one experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub problem: Problem,
    pub weights: CostWeights,
    pub sim: SimConfig,
    pub x0: DVector<f64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("<syntax>", e.to_string().trim().to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(table.clone()).map_err(|e| {
            let path = e.path().to_string();
            let reason = e.into_inner().to_string();
            let key = match tagged_culprit(&table, &path, &reason) {
                Some(field) => format!("{path}.{field}"),
                None if path == "." => "<root>".to_string(),
                None => path,
            };
            Error::config(key, reason)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            context: format!("reading config {}", path.display()),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if let GraphSpec::File { path: graph } = &cfg.graph {
            let resolved = cfg.base_dir.join(graph);
            if !resolved.is_file() {
                return Err(Error::config("graph.path", format!("file {} does not exist", resolved.display())));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let a = &self.algorithm;
        if let Some(eta) = a.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::config("algorithm.eta", "must be positive"));
            }
        }
        if a.max_iter == 0 {
            return Err(Error::config("algorithm.max_iter", "must be at least 1"));
        }
        if !(a.tol_grad >= 0.0) {
            return Err(Error::config("algorithm.tol_grad", "must be nonnegative"));
        }
        if !(a.tol_edge >= 0.0) {
            return Err(Error::config("algorithm.tol_edge", "must be nonnegative"));
        }
        a.dgd_schedule
            .validate()
            .map_err(|e| Error::config("algorithm.dgd_schedule", e.to_string()))?;
        if a.star && a.name != AlgorithmName::Docmc {
            return Err(Error::config("algorithm.star", "only applies to docmc"));
        }
        if self.consensus.rounds == Some(0) {
            return Err(Error::config("consensus.rounds", "must be at least 1"));
        }
        if let Some(c) = &self.expect.classification {
            if !["superlinear", "linear", "sublinear"].contains(&c.as_str()) {
                return Err(Error::config("expect.classification", format!("unknown class `{c}`")));
            }
        }
        match &self.objective {
            ObjectiveSpec::RandomQuadratic { dim, m1, m2, scale } => {
                if *dim == 0 {
                    return Err(Error::config("objective.dim", "must be at least 1"));
                }
                if !(0.0 < *m1 && m1 <= m2) {
                    return Err(Error::config("objective.m1", "need 0 < m1 <= m2"));
                }
                if !(*scale >= 0.0) {
                    return Err(Error::config("objective.scale", "must be nonnegative"));
                }
            }
            ObjectiveSpec::Logistic { dim, samples, lambda } => {
                if *dim == 0 || *samples == 0 {
                    return Err(Error::config("objective.dim", "dim and samples must be at least 1"));
                }
                if !(*lambda > 0.0) {
                    return Err(Error::config("objective.lambda", "must be positive"));
                }
            }
            ObjectiveSpec::Quadratic { .. } => {}
        }
        Ok(())
    }

    pub fn graph(&self, rng: &mut ChaCha8Rng) -> Result<DirectedGraph> {
        let wrap = |e: Error| Error::config("graph", e.to_string());
        match &self.graph {
            GraphSpec::Cycle { n } => DirectedGraph::cycle(*n).map_err(wrap),
            GraphSpec::Undirected { n, edges } => {
                let pairs: Vec<(usize, usize)> = edges
                    .iter()
                    .map(|[i, j]| {
                        if *i == 0 || *j == 0 {
                            Err(Error::config("graph.edges", "indices are 1-based"))
                        } else {
                            Ok((i - 1, j - 1))
                        }
                    })
                    .collect::<Result<_>>()?;
                DirectedGraph::undirected(*n, &pairs).map_err(wrap)
            }
            GraphSpec::File { path } => DirectedGraph::from_file(self.base_dir.join(path)).map_err(wrap),
            GraphSpec::Inline { text } => DirectedGraph::parse(text).map_err(wrap),
            GraphSpec::RandomBalanced { n, extra_cycles } => DirectedGraph::random_balanced(*n, *extra_cycles, rng).map_err(wrap),
        }
    }

    pub fn objectives(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<ObjectiveSet> {
        let wrap = |e: Error| Error::config("objective", e.to_string());
        match &self.objective {
            ObjectiveSpec::Quadratic { a, b } => {
                if a.len() != n || b.len() != n {
                    return Err(Error::config("objective.a", format!("need one A and b per agent ({n})")));
                }
                let items = a
                    .iter()
                    .zip(b)
                    .map(|(rows, bi)| {
                        let p = bi.len();
                        if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                            return Err(Error::config("objective.a", format!("each A must be {p}x{p}")));
                        }
                        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                        QuadraticObjective::new(DMatrix::from_row_slice(p, p, &flat), DVector::from_row_slice(bi)).map_err(wrap)
                    })
                    .collect::<Result<Vec<_>>>()?;
                ObjectiveSet::quadratics(items).map_err(wrap)
            }
            ObjectiveSpec::RandomQuadratic { dim, m1, m2, scale } => {
                let items = (0..n)
                    .map(|_| QuadraticObjective::random(*dim, *m1, *m2, *scale, rng).map_err(wrap))
                    .collect::<Result<Vec<_>>>()?;
                ObjectiveSet::quadratics(items).map_err(wrap)
            }
            ObjectiveSpec::Logistic { dim, samples, lambda } => {
                let items = (0..n)
                    .map(|_| LogisticObjective::random(*dim, *samples, *lambda, rng).map_err(wrap))
                    .collect::<Result<Vec<_>>>()?;
                ObjectiveSet::logistics(items).map_err(wrap)
            }
        }
    }

    /// Build the instance. The seed drives two independent streams: one for
    /// the graph and objectives, one for the initial state.
    pub fn prepare(&self) -> Result<Prepared> {
        let mut instance_rng = ChaCha8Rng::seed_from_u64(self.seed);
        let graph = self.graph(&mut instance_rng)?;
        graph
            .require_assumption()
            .map_err(|e| Error::config("graph", e.to_string()))?;
        let n = graph.n();
        let objectives = self.objectives(n, &mut instance_rng)?;
        let p = objectives.dim();
        let (_, m2) = objectives.bounds();
        let eye = |v: &[f64]| v.iter().map(|&s| DMatrix::identity(p, p) * s).collect::<Vec<_>>();
        let weights = CostWeights::new(
            eye(&self.weights.q.expand(n, "weights.q")?),
            eye(&self.weights.r.expand(n, "weights.r")?),
            eye(&self.weights.h.expand(n, "weights.h")?),
        )
        .map_err(|e| Error::config("weights", e.to_string()))?;
        let diameter = graph.undirected_diameter();
        let consensus = match self.consensus.mode {
            ConsensusMode::Exact => ConsensusConfig::exact(),
            ConsensusMode::Linear => ConsensusConfig::linear(self.consensus.rounds.unwrap_or(10 * diameter.max(1)))?,
        };
        let a = &self.algorithm;
        let algorithm = AlgorithmConfig {
            eta: a.eta.unwrap_or(1.0 / m2),
            inner_cap: a.inner_cap,
            dgd_schedule: a.dgd_schedule,
            tol_grad: a.tol_grad,
            tol_edge: a.tol_edge,
            max_iter: a.max_iter,
        };
        if a.name == AlgorithmName::Doaoc {
            algorithm
                .check_eta(m2)
                .map_err(|e| Error::config("algorithm.eta", e.to_string()))?;
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(self.seed);
        init_rng.set_stream(1);
        let x0 = self.init.initial_state(n, p, &mut init_rng)?;
        let problem = Problem::new(graph, objectives)?;
        Ok(Prepared {
            problem,
            weights,
            sim: SimConfig {
                algorithm,
                consensus,
                star: a.star,
            },
            x0,
        })
    }

    /// Whether the run has a convergence target rather than a fixed budget.
    pub fn requires_convergence(&self) -> bool {
        self.algorithm.tol_grad > 0.0 || self.algorithm.tol_edge > 0.0
    }
}
