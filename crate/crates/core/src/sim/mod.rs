//! Deterministic synchronous-round execution of the distributed methods.
//!
//! Agents and the optional server exchange serialized payloads through a
//! [`Network`] that rejects any message outside the allowed topology. All
//! quantities an agent acts on are decoded from received payloads.

pub mod message;
pub mod trace;

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{self, AlgorithmConfig, CentralizedVariant, IterationState};
use crate::consensus::{ConsensusConfig, ConsensusMode};
use crate::control::{self, CostWeights, RiccatiSolution};
use crate::error::{Error, Result};
use crate::graph::{DirectedGraph, IncidenceMap};
use crate::linalg;
use crate::objective::ObjectiveSet;

use message::{decode_symmetric, decode_vector, encode_symmetric, encode_vector, Message, MessageRecord, Node, PayloadKind};
use trace::{ConvergenceTrace, TraceRow};

/// Tolerance of the per-round check `B x = e`.
pub const CONSERVATION_TOL: f64 = 1e-12;

/// Graph, objectives and the centralized reference minimizer.
#[derive(Debug, Clone)]
pub struct Problem {
    pub graph: DirectedGraph,
    pub objectives: ObjectiveSet,
    pub x_star: DVector<f64>,
    pub f_star: f64,
    incidence: IncidenceMap,
}

impl Problem {
    pub fn new(graph: DirectedGraph, objectives: ObjectiveSet) -> Result<Self> {
        graph.require_assumption()?;
        if graph.n() != objectives.n() {
            return Err(Error::dim("objectives per agent", graph.n(), objectives.n()));
        }
        let x_star = objectives.reference_minimizer(1e-12)?;
        let f_star = objectives.total_value(&x_star)?;
        let incidence = graph.incidence();
        Ok(Self {
            graph,
            objectives,
            x_star,
            f_star,
            incidence,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn dim(&self) -> usize {
        self.objectives.dim()
    }

    pub fn incidence(&self) -> &IncidenceMap {
        &self.incidence
    }

    /// `1 ⊗ x*`.
    pub fn stacked_optimum(&self) -> DVector<f64> {
        linalg::stack(&vec![self.x_star.clone(); self.n()])
    }

    pub fn mean_state(&self, x: &DVector<f64>) -> DVector<f64> {
        let parts = linalg::blocks(x, self.dim());
        parts.iter().sum::<DVector<f64>>() / self.n() as f64
    }

    fn row(&self, k: usize, x: &DVector<f64>, msgs: usize, bytes: usize) -> Result<TraceRow> {
        let mean = self.mean_state(x);
        let stacked_mean = linalg::stack(&vec![mean.clone(); self.n()]);
        Ok(TraceRow {
            k,
            err_to_opt: (x - self.stacked_optimum()).norm(),
            consensus_err: (x - stacked_mean).norm(),
            edge_norm: self.incidence.errors(x, self.dim())?.norm(),
            f_gap: self.objectives.total_value(&mean)? - self.f_star,
            msgs,
            bytes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Initialization {
    /// Independent uniform entries in `[-scale, scale]`.
    Random { scale: f64 },
    /// Every agent at `value` (length `p`, or length 1 broadcast).
    Consensus { value: Vec<f64> },
    /// The full stacked state.
    Literal { x: Vec<f64> },
}

impl Initialization {
    pub fn initial_state<R: Rng + ?Sized>(&self, n: usize, p: usize, rng: &mut R) -> Result<DVector<f64>> {
        match self {
            Initialization::Random { scale } => {
                if !(*scale > 0.0) {
                    return Err(Error::config("init.scale", "must be positive"));
                }
                Ok(DVector::from_fn(n * p, |_, _| rng.random_range(-scale..=*scale)))
            }
            Initialization::Consensus { value } => {
                let block = match value.len() {
                    1 => DVector::from_element(p, value[0]),
                    l if l == p => DVector::from_row_slice(value),
                    l => return Err(Error::config("init.value", format!("expected {p} entries, got {l}"))),
                };
                Ok(linalg::stack(&vec![block; n]))
            }
            Initialization::Literal { x } => {
                if x.len() != n * p {
                    return Err(Error::config("init.x", format!("expected {} entries, got {}", n * p, x.len())));
                }
                Ok(DVector::from_row_slice(x))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimConfig {
    pub algorithm: AlgorithmConfig,
    pub consensus: ConsensusConfig,
    /// DOCMC over a star network: no edge errors, `R` in place of `Γ_P`.
    pub star: bool,
}

enum Topology<'a> {
    Peer(&'a DirectedGraph),
    Server,
}

/// In-process message queues with a global barrier per sub-round.
struct Network<'a> {
    topology: Topology<'a>,
    n: usize,
    round: usize,
    pending: Vec<Message>,
    log: Vec<MessageRecord>,
}

struct Inboxes {
    agents: Vec<Vec<Message>>,
    server: Vec<Message>,
}

impl<'a> Network<'a> {
    fn new(topology: Topology<'a>, n: usize) -> Self {
        Self {
            topology,
            n,
            round: 0,
            pending: Vec::new(),
            log: Vec::new(),
        }
    }

    fn send(&mut self, from: Node, to: Node, origin: Node, kind: PayloadKind, payload: Vec<u8>) -> Result<()> {
        let allowed = match (&self.topology, from, to) {
            (Topology::Peer(g), Node::Agent(i), Node::Agent(j)) => i != j && g.adjacent(i, j),
            (Topology::Server, Node::Agent(i), Node::Server) | (Topology::Server, Node::Server, Node::Agent(i)) => i < self.n,
            _ => false,
        };
        if !allowed {
            return Err(Error::Simulation(format!("message {from:?} -> {to:?} is not on an allowed link")));
        }
        self.pending.push(Message {
            round: self.round,
            from,
            to,
            origin,
            kind,
            payload,
        });
        Ok(())
    }

    /// Barrier: deliver everything sent this sub-round, ordered by sender.
    fn deliver(&mut self) -> Inboxes {
        let mut msgs = std::mem::take(&mut self.pending);
        msgs.sort_by_key(|m| (m.to, m.from, m.origin, m.kind));
        let mut inbox = Inboxes {
            agents: vec![Vec::new(); self.n],
            server: Vec::new(),
        };
        for m in msgs {
            self.log.push(m.record());
            match m.to {
                Node::Agent(i) => inbox.agents[i].push(m),
                Node::Server => inbox.server.push(m),
            }
        }
        self.round += 1;
        inbox
    }
}

fn agent_of(node: Node) -> Result<usize> {
    match node {
        Node::Agent(i) => Ok(i),
        Node::Server => Err(Error::Simulation("unexpected server origin".into())),
    }
}

fn check_finite(x: &DVector<f64>, k: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("state became non-finite at iteration {k}")))
    }
}

fn check_conservation(b: &IncidenceMap, x: &DVector<f64>, p: usize, e: &DVector<f64>) -> Result<()> {
    let dev = (b.errors(x, p)? - e).amax();
    if dev > CONSERVATION_TOL {
        return Err(Error::Simulation(format!("assembled edge errors deviate from B x by {dev:e}")));
    }
    Ok(())
}

/// Bookkeeping shared by every run loop.
struct Recorder<'p> {
    problem: &'p Problem,
    trace: ConvergenceTrace,
    logged: usize,
    clock: Instant,
}

impl<'p> Recorder<'p> {
    fn new(problem: &'p Problem, algorithm: &str) -> Self {
        Self {
            problem,
            trace: ConvergenceTrace {
                algorithm: algorithm.to_string(),
                n: problem.n(),
                dim: problem.dim(),
                rows: Vec::new(),
                states: Vec::new(),
                messages: Vec::new(),
                round_seconds: Vec::new(),
                converged: false,
                x_star: problem.x_star.clone(),
            },
            logged: 0,
            clock: Instant::now(),
        }
    }

    fn record(&mut self, k: usize, x: &DVector<f64>, log: &[MessageRecord]) -> Result<()> {
        check_finite(x, k)?;
        let fresh = &log[self.logged..];
        let row = self.problem.row(k, x, fresh.len(), fresh.iter().map(|m| m.bytes).sum())?;
        self.trace.messages.extend_from_slice(fresh);
        self.logged = log.len();
        self.trace.rows.push(row);
        self.trace.states.push(x.clone());
        if k > 0 {
            self.trace.round_seconds.push(self.clock.elapsed().as_secs_f64());
        }
        self.clock = Instant::now();
        Ok(())
    }

    fn finish(mut self, converged: bool) -> ConvergenceTrace {
        self.trace.converged = converged;
        self.trace
    }
}

fn mean_gradient_norm(problem: &Problem, x: &DVector<f64>) -> Result<f64> {
    let g = problem.objectives.stacked_gradient(x)?;
    let parts = linalg::blocks(&g, problem.dim());
    Ok((parts.iter().sum::<DVector<f64>>() / problem.n() as f64).norm())
}

fn should_stop(problem: &Problem, cfg: &AlgorithmConfig, x: &DVector<f64>) -> Result<bool> {
    let e = problem.incidence.errors(x, problem.dim())?;
    Ok(mean_gradient_norm(problem, x)? <= cfg.tol_grad && e.norm() <= cfg.tol_edge)
}

fn mean_in_order<T>(items: &[T], zero: T) -> T
where
    T: Clone + std::ops::AddAssign<T> + std::ops::Div<f64, Output = T>,
{
    let mut acc = zero;
    for v in items {
        acc += v.clone();
    }
    acc / items.len() as f64
}

/// DOCMC with a parameter server. Agents report local gradients, Hessians
/// and their measured edge errors; the server runs the inner loop and
/// returns each agent's block of the direction.
pub fn run_docmc(problem: &Problem, weights: &CostWeights, cfg: &SimConfig, x0: DVector<f64>) -> Result<ConvergenceTrace> {
    cfg.algorithm.validate()?;
    let (n, p) = (problem.n(), problem.dim());
    let b = problem.incidence();
    let riccati = if cfg.star {
        RiccatiSolution::without_edge_cost(weights, b)?
    } else {
        control::solve_riccati(weights, b, control::DEFAULT_RICCATI_TOL, control::DEFAULT_RICCATI_MAX_ITER)?
    };
    let mut net = Network::new(Topology::Server, n);
    let mut rec = Recorder::new(problem, if cfg.star { "docmc_star" } else { "docmc" });
    let mut x = x0;
    if x.len() != n * p {
        return Err(Error::dim("initial state", n * p, x.len()));
    }
    for k in 0..=cfg.algorithm.max_iter {
        rec.record(k, &x, &net.log)?;
        if should_stop(problem, &cfg.algorithm, &x)? {
            return Ok(rec.finish(true));
        }
        if k == cfg.algorithm.max_iter {
            break;
        }
        // Agents: local oracle calls and relative edge measurements.
        let blocks = linalg::blocks(&x, p);
        for i in 0..n {
            let me = Node::Agent(i);
            let grad = problem.objectives.gradient(i, &blocks[i])?;
            let hess = problem.objectives.hessian(i, &blocks[i])?;
            net.send(me, Node::Server, me, PayloadKind::Gradient, encode_vector(&grad))?;
            net.send(me, Node::Server, me, PayloadKind::Hessian, encode_symmetric(&hess))?;
            if !cfg.star {
                let rows = b.rows_of(i);
                let mut delta = DVector::zeros(rows.len() * p);
                for (slot, &r) in rows.iter().enumerate() {
                    let j = b.pairs()[r].1;
                    delta.rows_mut(slot * p, p).copy_from(&(&blocks[i] - &blocks[j]));
                }
                net.send(me, Node::Server, me, PayloadKind::EdgeError, encode_vector(&delta))?;
            }
        }
        let inbox = net.deliver();

        // Server: averages, assembled edge errors, inner loop.
        let mut grads = vec![DVector::zeros(p); n];
        let mut hessians = vec![DMatrix::zeros(p, p); n];
        let mut e = DVector::zeros(b.edge_count() * p);
        for m in &inbox.server {
            let i = agent_of(m.from)?;
            match m.kind {
                PayloadKind::Gradient => grads[i] = decode_vector(&m.payload)?,
                PayloadKind::Hessian => hessians[i] = decode_symmetric(&m.payload)?,
                PayloadKind::EdgeError => {
                    let delta = decode_vector(&m.payload)?;
                    for (slot, &r) in b.rows_of(i).iter().enumerate() {
                        e.rows_mut(r * p, p).copy_from(&delta.rows(slot * p, p));
                    }
                }
                _ => return Err(Error::Simulation("unexpected payload at server".into())),
            }
        }
        if !cfg.star {
            check_conservation(b, &x, p, &e)?;
        }
        let g = mean_in_order(&grads, DVector::zeros(p));
        let h = linalg::symmetrize(&mean_in_order(&hessians, DMatrix::zeros(p, p)));
        let state = IterationState::new(
            k,
            x.clone(),
            b,
            p,
            linalg::stack(&grads),
            linalg::stack(&vec![g; n]),
            linalg::block_diag(&vec![h; n]),
        )?;
        if !cfg.star && (state.e() - &e).amax() > CONSERVATION_TOL {
            return Err(Error::Simulation("server edge errors disagree with state".into()));
        }
        let d = algorithms::docmc_direction(&state, &riccati, cfg.algorithm.inner_steps(k))?;
        for i in 0..n {
            net.send(Node::Server, Node::Agent(i), Node::Server, PayloadKind::Direction, encode_vector(&d.rows(i * p, p).into_owned()))?;
        }
        let inbox = net.deliver();

        // Agents: apply their block.
        for (i, msgs) in inbox.agents.iter().enumerate() {
            let m = msgs
                .iter()
                .find(|m| m.kind == PayloadKind::Direction)
                .ok_or_else(|| Error::Simulation(format!("agent {i} received no direction")))?;
            let di = decode_vector(&m.payload)?;
            let next = x.rows(i * p, p) + di;
            x.rows_mut(i * p, p).copy_from(&next);
        }
    }
    Ok(rec.finish(false))
}

/// Flood one payload per agent for `diameter` sub-rounds; afterwards every
/// agent holds every origin's payload.
fn flood(
    net: &mut Network,
    graph: &DirectedGraph,
    kind: PayloadKind,
    own: Vec<Vec<u8>>,
) -> Result<Vec<BTreeMap<usize, Vec<u8>>>> {
    let n = own.len();
    let mut known: Vec<BTreeMap<usize, Vec<u8>>> = own.into_iter().enumerate().map(|(i, v)| BTreeMap::from([(i, v)])).collect();
    let mut fresh: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for _ in 0..graph.undirected_diameter() {
        for i in 0..n {
            for &o in &fresh[i] {
                for j in graph.adjacent_to(i) {
                    net.send(Node::Agent(i), Node::Agent(j), Node::Agent(o), kind, known[i][&o].clone())?;
                }
            }
        }
        let inbox = net.deliver();
        fresh = vec![Vec::new(); n];
        for (j, msgs) in inbox.agents.into_iter().enumerate() {
            for m in msgs {
                let o = agent_of(m.origin)?;
                if let std::collections::btree_map::Entry::Vacant(slot) = known[j].entry(o) {
                    slot.insert(m.payload);
                    fresh[j].push(o);
                }
            }
        }
    }
    if known.iter().any(|k| k.len() != n) {
        return Err(Error::Simulation("flooding did not reach every agent".into()));
    }
    Ok(known)
}

/// `rounds` synchronous mixing rounds of per-agent values. Agent `i` needs
/// the value of every `j` with `W_ij ≠ 0`.
fn mix_rounds<T, E, D>(
    net: &mut Network,
    w: &DMatrix<f64>,
    kind: PayloadKind,
    mut values: Vec<T>,
    rounds: usize,
    encode: E,
    decode: D,
    zero: T,
) -> Result<Vec<T>>
where
    T: Clone + std::ops::AddAssign<T> + std::ops::Mul<f64, Output = T>,
    E: Fn(&T) -> Vec<u8>,
    D: Fn(&[u8]) -> Result<T>,
{
    let n = values.len();
    for _ in 0..rounds {
        for j in 0..n {
            for i in 0..n {
                if i != j && w[(i, j)] != 0.0 {
                    net.send(Node::Agent(j), Node::Agent(i), Node::Agent(j), kind, encode(&values[j]))?;
                }
            }
        }
        let inbox = net.deliver();
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let mut received: BTreeMap<usize, T> = BTreeMap::new();
            for m in &inbox.agents[i] {
                received.insert(agent_of(m.from)?, decode(&m.payload)?);
            }
            let mut acc = zero.clone();
            for j in 0..n {
                if w[(i, j)] != 0.0 {
                    let v = if j == i {
                        values[i].clone()
                    } else {
                        received.remove(&j).ok_or_else(|| Error::Simulation(format!("agent {i} missed a value from {j}")))?
                    };
                    acc += v * w[(i, j)];
                }
            }
            next.push(acc);
        }
        values = next;
    }
    Ok(values)
}

/// DOAOC: consensus on gradients and Hessians, state exchange with
/// neighbours, relay of the edge-error sets `δ_i`, then the local loop.
pub fn run_doaoc(problem: &Problem, weights: &CostWeights, cfg: &SimConfig, x0: DVector<f64>) -> Result<ConvergenceTrace> {
    cfg.algorithm.validate()?;
    cfg.consensus.validate()?;
    let (n, p) = (problem.n(), problem.dim());
    let graph = &problem.graph;
    let b = problem.incidence();
    let riccati = control::solve_riccati(weights, b, control::DEFAULT_RICCATI_TOL, control::DEFAULT_RICCATI_MAX_ITER)?;
    let w = graph.mixing_matrix()?;
    let mut net = Network::new(Topology::Peer(graph), n);
    let mut rec = Recorder::new(problem, "doaoc");
    let mut x = x0;
    if x.len() != n * p {
        return Err(Error::dim("initial state", n * p, x.len()));
    }
    for k in 0..=cfg.algorithm.max_iter {
        rec.record(k, &x, &net.log)?;
        if should_stop(problem, &cfg.algorithm, &x)? {
            return Ok(rec.finish(true));
        }
        if k == cfg.algorithm.max_iter {
            break;
        }
        let blocks = linalg::blocks(&x, p);
        let grads: Vec<DVector<f64>> = (0..n).map(|i| problem.objectives.gradient(i, &blocks[i])).collect::<Result<_>>()?;
        let hessians: Vec<DMatrix<f64>> = (0..n).map(|i| problem.objectives.hessian(i, &blocks[i])).collect::<Result<_>>()?;

        // Step 3: average gradient and Hessian at every agent.
        let (g, h): (Vec<DVector<f64>>, Vec<DMatrix<f64>>) = match cfg.consensus.mode {
            ConsensusMode::Exact => {
                let kg = flood(&mut net, graph, PayloadKind::Gradient, grads.iter().map(encode_vector).collect())?;
                let kh = flood(&mut net, graph, PayloadKind::Hessian, hessians.iter().map(encode_symmetric).collect())?;
                let mut g = Vec::with_capacity(n);
                let mut h = Vec::with_capacity(n);
                for i in 0..n {
                    let gs: Vec<DVector<f64>> = kg[i].values().map(|v| decode_vector(v)).collect::<Result<_>>()?;
                    let hs: Vec<DMatrix<f64>> = kh[i].values().map(|v| decode_symmetric(v)).collect::<Result<_>>()?;
                    g.push(mean_in_order(&gs, DVector::zeros(p)));
                    h.push(linalg::symmetrize(&mean_in_order(&hs, DMatrix::zeros(p, p))));
                }
                (g, h)
            }
            ConsensusMode::Linear => {
                let rounds = cfg.consensus.rounds;
                let g = mix_rounds(&mut net, &w, PayloadKind::Gradient, grads.clone(), rounds, encode_vector, decode_vector, DVector::zeros(p))?;
                let h = mix_rounds(&mut net, &w, PayloadKind::Hessian, hessians.clone(), rounds, encode_symmetric, decode_symmetric, DMatrix::zeros(p, p))?;
                (g, h.iter().map(linalg::symmetrize).collect())
            }
        };

        // Step 4: neighbour states give δ_i; the δ sets are relayed so each
        // agent can evaluate its block of BᵀPe.
        for i in 0..n {
            for j in graph.adjacent_to(i) {
                net.send(Node::Agent(i), Node::Agent(j), Node::Agent(i), PayloadKind::State, encode_vector(&blocks[i]))?;
            }
        }
        let inbox = net.deliver();
        let mut deltas = Vec::with_capacity(n);
        for i in 0..n {
            let heard: BTreeMap<usize, DVector<f64>> = inbox.agents[i]
                .iter()
                .map(|m| Ok((agent_of(m.from)?, decode_vector(&m.payload)?)))
                .collect::<Result<_>>()?;
            let rows = b.rows_of(i);
            let mut delta = DVector::zeros(rows.len() * p);
            for (slot, &r) in rows.iter().enumerate() {
                let j = b.pairs()[r].1;
                let xj = heard.get(&j).ok_or_else(|| Error::Simulation(format!("agent {i} lacks the state of {j}")))?;
                delta.rows_mut(slot * p, p).copy_from(&(&blocks[i] - xj));
            }
            deltas.push(encode_vector(&delta));
        }
        let known_delta = flood(&mut net, graph, PayloadKind::EdgeError, deltas)?;

        // Steps 5–9: local loop and update.
        let steps = cfg.algorithm.inner_steps(k);
        let mut next = x.clone();
        for i in 0..n {
            let mut e = DVector::zeros(b.edge_count() * p);
            for (&o, payload) in &known_delta[i] {
                let delta = decode_vector(payload)?;
                for (slot, &r) in b.rows_of(o).iter().enumerate() {
                    e.rows_mut(r * p, p).copy_from(&delta.rows(slot * p, p));
                }
            }
            check_conservation(b, &x, p, &e)?;
            let fb = riccati.feedback(&e)?.rows(i * p, p).into_owned();
            let d = algorithms::doaoc_direction_agent(&g[i], &h[i], &fb, cfg.algorithm.eta, steps);
            next.rows_mut(i * p, p).copy_from(&(&blocks[i] + d));
        }
        x = next;
    }
    Ok(rec.finish(false))
}

/// Decentralized gradient descent with neighbour state exchange.
pub fn run_dgd(problem: &Problem, cfg: &SimConfig, x0: DVector<f64>) -> Result<ConvergenceTrace> {
    cfg.algorithm.validate()?;
    let (n, p) = (problem.n(), problem.dim());
    let graph = &problem.graph;
    let w = graph.mixing_matrix()?;
    let mut net = Network::new(Topology::Peer(graph), n);
    let mut rec = Recorder::new(problem, "dgd");
    let mut x = x0;
    if x.len() != n * p {
        return Err(Error::dim("initial state", n * p, x.len()));
    }
    for k in 0..=cfg.algorithm.max_iter {
        rec.record(k, &x, &net.log)?;
        if should_stop(problem, &cfg.algorithm, &x)? {
            return Ok(rec.finish(true));
        }
        if k == cfg.algorithm.max_iter {
            break;
        }
        let blocks = linalg::blocks(&x, p);
        let mixed = mix_rounds(&mut net, &w, PayloadKind::State, blocks.clone(), 1, encode_vector, decode_vector, DVector::zeros(p))?;
        let step = cfg.algorithm.dgd_schedule.at(k);
        let mut next = x.clone();
        for i in 0..n {
            let grad = problem.objectives.gradient(i, &blocks[i])?;
            next.rows_mut(i * p, p).copy_from(&(&mixed[i] - grad * step));
        }
        x = next;
    }
    Ok(rec.finish(false))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentralizedKind {
    /// `R` in place of `Γ_P`; requires identical `R_i`.
    Exact,
    /// Scalar step `η`.
    Eta,
}

/// The e-free reductions run on a single consensus state, reported as if
/// every agent held it.
pub fn run_centralized(
    problem: &Problem,
    weights: &CostWeights,
    kind: CentralizedKind,
    cfg: &SimConfig,
    x0: DVector<f64>,
) -> Result<ConvergenceTrace> {
    cfg.algorithm.validate()?;
    let (n, p) = (problem.n(), problem.dim());
    if x0.len() != n * p {
        return Err(Error::dim("initial state", n * p, x0.len()));
    }
    let blocks = linalg::blocks(&x0, p);
    if blocks.iter().any(|b| b != &blocks[0]) {
        return Err(Error::Parameter("centralized runs need a consensus initial state".into()));
    }
    let variant = match kind {
        CentralizedKind::Exact => {
            let r = &weights.r_blocks()[0];
            if weights.r_blocks().iter().any(|ri| ri != r) {
                return Err(Error::Parameter("centralized exact variant needs identical R_i".into()));
            }
            CentralizedVariant::Exact { r: r.clone() }
        }
        CentralizedKind::Eta => CentralizedVariant::Eta { eta: cfg.algorithm.eta },
    };
    let mut rec = Recorder::new(problem, "centralized");
    let mut y = blocks[0].clone();
    for k in 0..=cfg.algorithm.max_iter {
        let x = linalg::stack(&vec![y.clone(); n]);
        rec.record(k, &x, &[])?;
        if should_stop(problem, &cfg.algorithm, &x)? {
            return Ok(rec.finish(true));
        }
        if k == cfg.algorithm.max_iter {
            break;
        }
        let grads: Vec<DVector<f64>> = (0..n).map(|i| problem.objectives.gradient(i, &y)).collect::<Result<_>>()?;
        let hessians: Vec<DMatrix<f64>> = (0..n).map(|i| problem.objectives.hessian(i, &y)).collect::<Result<_>>()?;
        let g = mean_in_order(&grads, DVector::zeros(p));
        let h = linalg::symmetrize(&mean_in_order(&hessians, DMatrix::zeros(p, p)));
        y = algorithms::centralized_step(&y, &g, &h, &variant, k)?;
    }
    Ok(rec.finish(false))
}

/// Pure consensus `x ← x − Γ_P⁻¹BᵀPe` through the server round; the
/// objectives only enter the trace columns.
pub fn run_consensus_only(problem: &Problem, weights: &CostWeights, cfg: &SimConfig, x0: DVector<f64>) -> Result<ConvergenceTrace> {
    cfg.algorithm.validate()?;
    let (n, p) = (problem.n(), problem.dim());
    let b = problem.incidence();
    let riccati = control::solve_riccati(weights, b, control::DEFAULT_RICCATI_TOL, control::DEFAULT_RICCATI_MAX_ITER)?;
    let mut net = Network::new(Topology::Server, n);
    let mut rec = Recorder::new(problem, "consensus_only");
    let mut x = x0;
    if x.len() != n * p {
        return Err(Error::dim("initial state", n * p, x.len()));
    }
    let zeros = DVector::zeros(n * p);
    for k in 0..=cfg.algorithm.max_iter {
        rec.record(k, &x, &net.log)?;
        if b.errors(&x, p)?.norm() <= cfg.algorithm.tol_edge {
            return Ok(rec.finish(true));
        }
        if k == cfg.algorithm.max_iter {
            break;
        }
        let blocks = linalg::blocks(&x, p);
        for i in 0..n {
            let rows = b.rows_of(i);
            let mut delta = DVector::zeros(rows.len() * p);
            for (slot, &r) in rows.iter().enumerate() {
                delta.rows_mut(slot * p, p).copy_from(&(&blocks[i] - &blocks[b.pairs()[r].1]));
            }
            net.send(Node::Agent(i), Node::Server, Node::Agent(i), PayloadKind::EdgeError, encode_vector(&delta))?;
        }
        let inbox = net.deliver();
        let mut e = DVector::zeros(b.edge_count() * p);
        for m in &inbox.server {
            let i = agent_of(m.from)?;
            let delta = decode_vector(&m.payload)?;
            for (slot, &r) in b.rows_of(i).iter().enumerate() {
                e.rows_mut(r * p, p).copy_from(&delta.rows(slot * p, p));
            }
        }
        check_conservation(b, &x, p, &e)?;
        let state = IterationState::new(k, x.clone(), b, p, zeros.clone(), zeros.clone(), DMatrix::zeros(n * p, n * p))?;
        let target = algorithms::consensus_only_step(&state, &riccati)?;
        let d = target - &x;
        for i in 0..n {
            net.send(Node::Server, Node::Agent(i), Node::Server, PayloadKind::Direction, encode_vector(&d.rows(i * p, p).into_owned()))?;
        }
        let inbox = net.deliver();
        for (i, msgs) in inbox.agents.iter().enumerate() {
            let di = decode_vector(&msgs[0].payload)?;
            let next = x.rows(i * p, p) + di;
            x.rows_mut(i * p, p).copy_from(&next);
        }
    }
    Ok(rec.finish(false))
}
