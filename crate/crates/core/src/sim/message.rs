//! Message records and the fixed little-endian payload layout:
//! `rows: u32`, `cols: u32`, then the values as `f64`. Symmetric matrices
//! carry only their upper triangle, row by row.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Agent(usize),
    Server,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Gradient,
    Hessian,
    EdgeError,
    Direction,
    State,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub round: usize,
    pub from: Node,
    pub to: Node,
    /// Node whose value the payload carries; differs from `from` when relayed.
    pub origin: Node,
    pub kind: PayloadKind,
    pub payload: Vec<u8>,
}

/// What the trace keeps of a delivered message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MessageRecord {
    pub round: usize,
    pub from: Node,
    pub to: Node,
    pub origin: Node,
    pub kind: PayloadKind,
    pub bytes: usize,
}

impl Message {
    pub fn record(&self) -> MessageRecord {
        MessageRecord {
            round: self.round,
            from: self.from,
            to: self.to,
            origin: self.origin,
            kind: self.kind,
            bytes: self.payload.len(),
        }
    }
}

fn header(rows: usize, cols: usize, values: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * values);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out
}

pub fn encode_vector(v: &DVector<f64>) -> Vec<u8> {
    let mut out = header(v.len(), 1, v.len());
    for x in v.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn encode_symmetric(m: &DMatrix<f64>) -> Vec<u8> {
    let p = m.nrows();
    let mut out = header(p, p, p * (p + 1) / 2);
    for i in 0..p {
        for j in i..p {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

fn read_header(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    if bytes.len() < 8 {
        return Err(Error::Simulation("payload shorter than header".into()));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    Ok((rows, cols, &bytes[8..]))
}

fn read_values(body: &[u8], count: usize) -> Result<Vec<f64>> {
    if body.len() != 8 * count {
        return Err(Error::Simulation(format!("payload holds {} bytes, expected {}", body.len(), 8 * count)));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn decode_vector(bytes: &[u8]) -> Result<DVector<f64>> {
    let (rows, cols, body) = read_header(bytes)?;
    if cols != 1 {
        return Err(Error::Simulation(format!("vector payload has {cols} columns")));
    }
    Ok(DVector::from_vec(read_values(body, rows)?))
}

pub fn decode_symmetric(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let (rows, cols, body) = read_header(bytes)?;
    if rows != cols {
        return Err(Error::Simulation(format!("symmetric payload is {rows}x{cols}")));
    }
    let vals = read_values(body, rows * (rows + 1) / 2)?;
    let mut m = DMatrix::zeros(rows, rows);
    let mut it = vals.into_iter();
    for i in 0..rows {
        for j in i..rows {
            let v = it.next().unwrap();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}
