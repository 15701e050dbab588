//! Communication topology: balanced digraphs, the signed incidence map and
//! mixing matrices.
//!
//! Agents are indexed `0..n` in code. The text file format is 1-based:
//!
//! ```text
//! n 3
//! edge 1 2 1.0
//! edge 2 3 1.0
//! edge 3 1 1.0
//! ```

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const BALANCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Weighted directed graph over `n ≥ 2` agents. Edges are kept in
/// lexicographic `(from, to)` order, which fixes the row order of the
/// incidence map and therefore the layout of the stacked error vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectedGraph {
    n: usize,
    edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphDiagnostics {
    pub balanced: bool,
    pub strongly_connected: bool,
    /// Human-readable description of the first violation found, if any.
    pub witness: Option<String>,
}

impl GraphDiagnostics {
    pub fn satisfied(&self) -> bool {
        self.balanced && self.strongly_connected
    }
}

impl DirectedGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Graph(format!("need at least 2 agents, got {n}")));
        }
        let mut out: Vec<Edge> = Vec::new();
        for (from, to, weight) in edges {
            if from >= n || to >= n {
                return Err(Error::Graph(format!("edge ({from}, {to}) out of range for n = {n}")));
            }
            if from == to {
                return Err(Error::Graph(format!("self-loop at agent {from}")));
            }
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(Error::Graph(format!(
                    "edge ({from}, {to}) has non-positive weight {weight}"
                )));
            }
            out.push(Edge { from, to, weight });
        }
        out.sort_by_key(|e| (e.from, e.to));
        if let Some(w) = out.windows(2).find(|w| w[0].from == w[1].from && w[0].to == w[1].to) {
            return Err(Error::Graph(format!("duplicate edge ({}, {})", w[0].from, w[0].to)));
        }
        Ok(Self { n, edges: out })
    }

    /// Unit-weight graph with both directions of every listed pair.
    pub fn undirected(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::new(n, pairs.iter().flat_map(|&(i, j)| [(i, j, 1.0), (j, i, 1.0)]))
    }

    /// Unit-weight directed cycle `0 → 1 → … → n-1 → 0`.
    pub fn cycle(n: usize) -> Result<Self> {
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n, 1.0)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Out-neighbour set `N_i = { j : (i, j) ∈ E }`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.from == i).map(|e| e.to).collect()
    }

    /// True when an edge joins `i` and `j` in either direction.
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.edges
            .iter()
            .any(|e| (e.from == i && e.to == j) || (e.from == j && e.to == i))
    }

    /// Agents sharing an edge with `i` in either direction, ascending.
    pub fn adjacent_to(&self, i: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|e| {
                if e.from == i {
                    Some(e.to)
                } else if e.to == i {
                    Some(e.from)
                } else {
                    None
                }
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            a[(e.from, e.to)] = e.weight;
        }
        a
    }

    pub fn validate(&self) -> GraphDiagnostics {
        let mut witness = None;
        let a = self.adjacency();
        let mut balanced = true;
        for i in 0..self.n {
            let out_w: f64 = a.row(i).sum();
            let in_w: f64 = a.column(i).sum();
            if (out_w - in_w).abs() > BALANCE_TOL * (1.0 + out_w.abs().max(in_w.abs())) {
                balanced = false;
                witness = Some(format!(
                    "agent {} has out-weight {out_w} but in-weight {in_w}",
                    i + 1
                ));
                break;
            }
        }
        let mut strongly_connected = true;
        'outer: for (label, reach) in [("reach", self.reachable_from(0, false)), ("be reached by", self.reachable_from(0, true))] {
            for (j, &r) in reach.iter().enumerate() {
                if !r {
                    strongly_connected = false;
                    if witness.is_none() {
                        witness = Some(format!("agent 1 cannot {label} agent {}", j + 1));
                    }
                    break 'outer;
                }
            }
        }
        GraphDiagnostics {
            balanced,
            strongly_connected,
            witness,
        }
    }

    /// Fails unless the graph is balanced and strongly connected.
    pub fn require_assumption(&self) -> Result<()> {
        let d = self.validate();
        if d.satisfied() {
            Ok(())
        } else {
            Err(Error::Graph(format!(
                "graph must be balanced and strongly connected: {}",
                d.witness.unwrap_or_default()
            )))
        }
    }

    fn reachable_from(&self, start: usize, reverse: bool) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for e in &self.edges {
                let (src, dst) = if reverse { (e.to, e.from) } else { (e.from, e.to) };
                if src == u && !seen[dst] {
                    seen[dst] = true;
                    queue.push_back(dst);
                }
            }
        }
        seen
    }

    /// Diameter of the underlying undirected graph (`usize::MAX` if disconnected).
    pub fn undirected_diameter(&self) -> usize {
        let mut diam = 0;
        for s in 0..self.n {
            let mut dist = vec![usize::MAX; self.n];
            dist[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for v in self.adjacent_to(u) {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            diam = diam.max(*dist.iter().max().unwrap());
        }
        diam
    }

    pub fn incidence(&self) -> IncidenceMap {
        let mut m = DMatrix::zeros(self.edges.len(), self.n);
        for (r, e) in self.edges.iter().enumerate() {
            m[(r, e.from)] = 1.0;
            m[(r, e.to)] = -1.0;
        }
        IncidenceMap {
            n: self.n,
            pairs: self.edges.iter().map(|e| (e.from, e.to)).collect(),
            matrix: m,
        }
    }

    /// `L = BᵀB`, the Laplacian of the symmetrized graph induced by the
    /// ordered-edge incidence map.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let b = self.incidence();
        b.matrix.transpose() * &b.matrix
    }

    /// Doubly stochastic mixing matrix `W = I − (D − A) / (1 + d_max)`, with
    /// `d_max` the largest weighted out-degree. For unit-weight undirected
    /// graphs this is the max-degree Metropolis rule.
    pub fn mixing_matrix(&self) -> Result<DMatrix<f64>> {
        self.require_assumption()?;
        let a = self.adjacency();
        let degrees: Vec<f64> = (0..self.n).map(|i| a.row(i).sum()).collect();
        let d_max = degrees.iter().cloned().fold(0.0, f64::max);
        let eps = 1.0 / (1.0 + d_max);
        let mut w = a * eps;
        for i in 0..self.n {
            w[(i, i)] = 1.0 - eps * degrees[i];
        }
        Ok(w)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut n = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Graph(format!("line {}: {msg}: `{raw}`", lineno + 1));
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "n" if toks.len() == 2 => {
                    n = Some(toks[1].parse::<usize>().map_err(|_| bad("bad agent count"))?);
                }
                "edge" if toks.len() == 4 => {
                    let i: usize = toks[1].parse().map_err(|_| bad("bad source index"))?;
                    let j: usize = toks[2].parse().map_err(|_| bad("bad target index"))?;
                    let w: f64 = toks[3].parse().map_err(|_| bad("bad weight"))?;
                    if i == 0 || j == 0 {
                        return Err(bad("indices are 1-based"));
                    }
                    edges.push((i - 1, j - 1, w));
                }
                _ => return Err(bad("expected `n <count>` or `edge <i> <j> <weight>`")),
            }
        }
        let n = n.ok_or_else(|| Error::Graph("missing `n <count>` line".into()))?;
        Self::new(n, edges)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            context: format!("reading graph file {}", path.display()),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("n {}\n", self.n);
        for e in &self.edges {
            let _ = writeln!(s, "edge {} {} {}", e.from + 1, e.to + 1, e.weight);
        }
        s
    }

    /// Random balanced, strongly connected digraph built by superimposing
    /// directed cycles: one Hamiltonian cycle plus `extra_cycles` random
    /// cycles of length ≥ 2. Overlapping edges accumulate weight.
    pub fn random_balanced<R: Rng + ?Sized>(n: usize, extra_cycles: usize, rng: &mut R) -> Result<Self> {
        if n < 2 {
            return Err(Error::Graph(format!("need at least 2 agents, got {n}")));
        }
        let mut weights = DMatrix::<f64>::zeros(n, n);
        let mut add_cycle = |nodes: &[usize]| {
            for k in 0..nodes.len() {
                weights[(nodes[k], nodes[(k + 1) % nodes.len()])] += 1.0;
            }
        };
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        add_cycle(&perm);
        for _ in 0..extra_cycles {
            let len = rng.random_range(2..=n);
            perm.shuffle(rng);
            add_cycle(&perm[..len]);
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if weights[(i, j)] > 0.0 {
                    edges.push((i, j, weights[(i, j)]));
                }
            }
        }
        Self::new(n, edges)
    }
}

/// Signed edge–node incidence map: one row per ordered edge `(i, j)` with
/// `+1` in column `i` and `−1` in column `j`, so `(B x)_{ij} = x_i − x_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMap {
    n: usize,
    pairs: Vec<(usize, usize)>,
    matrix: DMatrix<f64>,
}

impl IncidenceMap {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// `B ⊗ I_p`.
    pub fn expanded(&self, p: usize) -> DMatrix<f64> {
        linalg::kron_identity(&self.matrix, p)
    }

    /// Stacked edge errors `e = (B ⊗ I_p) x`.
    pub fn errors(&self, x: &DVector<f64>, p: usize) -> Result<DVector<f64>> {
        if x.len() != self.n * p {
            return Err(Error::dim("incidence errors", self.n * p, x.len()));
        }
        let mut e = DVector::zeros(self.pairs.len() * p);
        for (r, &(i, j)) in self.pairs.iter().enumerate() {
            for c in 0..p {
                e[r * p + c] = x[i * p + c] - x[j * p + c];
            }
        }
        Ok(e)
    }

    /// Row indices of the edges leaving agent `i` (its error set `δ_i`).
    pub fn rows_of(&self, i: usize) -> Vec<usize> {
        self.pairs
            .iter()
            .enumerate()
            .filter(|(_, &(from, _))| from == i)
            .map(|(r, _)| r)
            .collect()
    }
}

/// Second-largest singular value of a doubly stochastic matrix, i.e. the
/// spectral norm of `W − (1/n) 1 1ᵀ`.
pub fn consensus_contraction(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let dev = w - DMatrix::from_element(n, n, 1.0 / n as f64);
    linalg::sym_spectral_norm(&(dev.transpose() * &dev)).sqrt()
}
