//! Per-iteration convergence records and their CSV form.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::message::{MessageRecord, Node};

pub const CSV_HEADER: &str = "k,err_to_opt,consensus_err,edge_norm,f_gap,msgs,bytes";

/// One row per outer iteration. `msgs` and `bytes` count the traffic of the
/// round that produced `x(k)`, so row 0 carries none.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub err_to_opt: f64,
    pub consensus_err: f64,
    pub edge_norm: f64,
    pub f_gap: f64,
    pub msgs: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTrace {
    pub algorithm: String,
    pub n: usize,
    pub dim: usize,
    pub rows: Vec<TraceRow>,
    #[serde(skip)]
    pub states: Vec<DVector<f64>>,
    #[serde(skip)]
    pub messages: Vec<MessageRecord>,
    /// Wall-clock seconds per round; kept out of the CSV so traces stay
    /// byte-reproducible.
    pub round_seconds: Vec<f64>,
    pub converged: bool,
    #[serde(skip)]
    pub x_star: DVector<f64>,
}

impl ConvergenceTrace {
    pub fn iterations(&self) -> usize {
        self.rows.last().map_or(0, |r| r.k)
    }

    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.err_to_opt).collect()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trace holds at least the initial state")
    }

    /// First `k` with `err_to_opt ≤ tol`.
    pub fn iterations_to(&self, tol: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.err_to_opt <= tol).map(|r| r.k)
    }

    pub fn total_messages(&self) -> usize {
        self.messages.len()
    }

    pub fn total_bytes(&self) -> usize {
        self.messages.iter().map(|m| m.bytes).sum()
    }

    pub fn agent_to_agent_messages(&self) -> usize {
        self.messages
            .iter()
            .filter(|m| matches!((m.from, m.to), (Node::Agent(_), Node::Agent(_))))
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{},{}",
                r.k, r.err_to_opt, r.consensus_err, r.edge_norm, r.f_gap, r.msgs, r.bytes
            )
            .unwrap();
        }
        out
    }
}

/// Parse rows written by [`ConvergenceTrace::to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(Error::config("trace header", format!("expected `{CSV_HEADER}`, found `{}`", other.unwrap_or("")))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::config(format!("trace line {}", i + 2), format!("malformed row `{line}`"));
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        let int = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
        rows.push(TraceRow {
            k: int(f[0])?,
            err_to_opt: num(f[1])?,
            consensus_err: num(f[2])?,
            edge_norm: num(f[3])?,
            f_gap: num(f[4])?,
            msgs: int(f[5])?,
            bytes: int(f[6])?,
        });
    }
    Ok(rows)
}
