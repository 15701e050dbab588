//! Average consensus on per-agent vectors and symmetric matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusMode {
    /// Every agent obtains the exact arithmetic mean.
    #[default]
    Exact,
    /// `rounds` applications of the mixing matrix `W`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub mode: ConsensusMode,
    pub rounds: usize,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self::exact()
    }
}

impl ConsensusConfig {
    pub fn exact() -> Self {
        Self {
            mode: ConsensusMode::Exact,
            rounds: 1,
        }
    }

    pub fn linear(rounds: usize) -> Result<Self> {
        let cfg = Self {
            mode: ConsensusMode::Linear,
            rounds,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == ConsensusMode::Linear && self.rounds == 0 {
            return Err(Error::Parameter("linear consensus needs rounds >= 1".into()));
        }
        Ok(())
    }
}

pub fn mean_vector(values: &[DVector<f64>]) -> Result<DVector<f64>> {
    let first = values.first().ok_or_else(|| Error::Parameter("no values to average".into()))?;
    let mut acc = DVector::zeros(first.len());
    for v in values {
        if v.len() != first.len() {
            return Err(Error::dim("consensus value", first.len(), v.len()));
        }
        acc += v;
    }
    Ok(acc / values.len() as f64)
}

/// One synchronous mixing round `out_i = Σ_j W_ij v_j`.
pub fn mix_once(values: &[DVector<f64>], w: &DMatrix<f64>) -> Vec<DVector<f64>> {
    (0..values.len())
        .map(|i| {
            let mut acc = DVector::zeros(values[0].len());
            for (j, v) in values.iter().enumerate() {
                if w[(i, j)] != 0.0 {
                    acc += v * w[(i, j)];
                }
            }
            acc
        })
        .collect()
}

/// Per-agent averages of `values` under `cfg`. `w` is only read in linear
/// mode and must be `n × n`.
pub fn average_vectors(values: &[DVector<f64>], cfg: &ConsensusConfig, w: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    cfg.validate()?;
    let mean = mean_vector(values)?;
    match cfg.mode {
        ConsensusMode::Exact => Ok(vec![mean; values.len()]),
        ConsensusMode::Linear => {
            if w.nrows() != values.len() || w.ncols() != values.len() {
                return Err(Error::dim("mixing matrix", values.len(), w.nrows()));
            }
            let mut cur = values.to_vec();
            for _ in 0..cfg.rounds {
                cur = mix_once(&cur, w);
            }
            Ok(cur)
        }
    }
}

/// Entrywise [`average_vectors`] on square matrices; outputs are
/// symmetrized.
pub fn average_matrices(values: &[DMatrix<f64>], cfg: &ConsensusConfig, w: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    let first = values.first().ok_or_else(|| Error::Parameter("no values to average".into()))?;
    let (r, c) = first.shape();
    let flat: Result<Vec<DVector<f64>>> = values
        .iter()
        .map(|m| {
            if m.shape() != (r, c) {
                return Err(Error::dim("consensus matrix", r * c, m.len()));
            }
            Ok(DVector::from_column_slice(m.as_slice()))
        })
        .collect();
    Ok(average_vectors(&flat?, cfg, w)?
        .into_iter()
        .map(|v| linalg::symmetrize(&DMatrix::from_column_slice(r, c, v.as_slice())))
        .collect())
}

/// `max_i ‖v_i − mean‖`.
pub fn spread(values: &[DVector<f64>]) -> Result<f64> {
    let mean = mean_vector(values)?;
    Ok(values.iter().fold(0.0, |a, v| a.max((v - &mean).norm())))
}
