//! Convergence-rate classification of error traces.
//!
//! A ratio `r(k) = err(k+1)/err(k)` is usable when both errors are at least
//! [`ERROR_FLOOR`]. The last [`WINDOW`] usable ratios decide the class:
//! superlinear when every successive quotient `r(k+1)/r(k)` is at most
//! `1 − DELTA` and, if an envelope base `b` is known, the least-squares slope
//! of `ln r(k)` is at most `ln b + SLOPE_MARGIN`; otherwise linear with the
//! geometric mean `c` of the window when `c < 1 − DELTA`; otherwise
//! sublinear.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ERROR_FLOOR: f64 = 1e-13;
pub const WINDOW: usize = 8;
pub const DELTA: f64 = 0.05;
pub const SLOPE_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum RateClass {
    Sublinear,
    Linear { c: f64 },
    Superlinear,
}

impl RateClass {
    pub fn name(&self) -> &'static str {
        match self {
            RateClass::Sublinear => "sublinear",
            RateClass::Linear { .. } => "linear",
            RateClass::Superlinear => "superlinear",
        }
    }
}

/// Predicted geometric envelope of the ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Envelope {
    /// `r(k) ≤ r1 ρ^{k+1}`.
    Rho { rho: f64 },
    /// `r(k) ≤ r2 c^k`.
    C { c: f64 },
}

impl Envelope {
    fn base(&self) -> f64 {
        match *self {
            Envelope::Rho { rho } => rho,
            Envelope::C { c } => c,
        }
    }

    fn at(&self, k: usize) -> f64 {
        match *self {
            Envelope::Rho { rho } => rho.powi(k as i32 + 1),
            Envelope::C { c } => c.powi(k as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// `(k, r(k))` for every usable ratio.
    pub ratios: Vec<(usize, f64)>,
    /// Least-squares slope of `ln r(k)` over the window.
    pub slope: f64,
    pub classification: RateClass,
    pub envelope: Option<Envelope>,
    /// Smallest constant with `r(k) ≤ const · envelope(k)` on the usable ratios.
    pub envelope_constant: Option<f64>,
    /// Largest measured consensus contraction ratio.
    pub sigma: Option<f64>,
}

fn ls_slope(points: &[(usize, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for &(k, r) in points {
        num += (k as f64 - mx) * (r.ln() - my);
        den += (k as f64 - mx).powi(2);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Ratios of consecutive entries with both entries at or above the floor.
pub fn usable_ratios(values: &[f64]) -> Vec<(usize, f64)> {
    values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] >= ERROR_FLOOR && w[1] >= ERROR_FLOOR)
        .map(|(k, w)| (k, w[1] / w[0]))
        .collect()
}

/// Classify `errors[k] = ‖x(k) − x*‖`. `consensus` holds `‖x(k) − x̄(k)‖`
/// when available.
pub fn fit_rate(errors: &[f64], consensus: Option<&[f64]>, envelope: Option<Envelope>) -> Result<RateReport> {
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::Numerical("error trace contains non-finite entries".into()));
    }
    let ratios = usable_ratios(errors);
    if ratios.len() < WINDOW {
        return Err(Error::TraceTooShort {
            usable: ratios.len(),
            required: WINDOW,
        });
    }
    let window = &ratios[ratios.len() - WINDOW..];
    let slope = ls_slope(window);
    let decreasing = window.windows(2).all(|w| w[1].1 <= (1.0 - DELTA) * w[0].1);
    let envelope_ok = envelope.is_none_or(|env| slope <= env.base().ln() + SLOPE_MARGIN);
    let classification = if decreasing && envelope_ok {
        RateClass::Superlinear
    } else {
        let c = (window.iter().map(|w| w.1.ln()).sum::<f64>() / WINDOW as f64).exp();
        if c < 1.0 - DELTA {
            RateClass::Linear { c }
        } else {
            RateClass::Sublinear
        }
    };
    let envelope_constant = envelope.map(|env| ratios.iter().fold(0.0_f64, |a, &(k, r)| a.max(r / env.at(k))));
    let sigma = consensus.and_then(|c| {
        let rs = usable_ratios(c);
        (!rs.is_empty()).then(|| rs.iter().fold(0.0_f64, |a, r| a.max(r.1)))
    });
    Ok(RateReport {
        ratios,
        slope,
        classification,
        envelope,
        envelope_constant,
        sigma,
    })
}
