//! Step functions: the DGD baseline, DOCMC (inner loop and closed form),
//! DOAOC, the centralized reductions and the pure consensus step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::RiccatiSolution;
use crate::error::{Error, Result};
use crate::graph::IncidenceMap;
use crate::linalg;
use crate::objective::ObjectiveSet;

/// Snapshot of one outer iteration. `e` is always recomputed from `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub k: usize,
    n: usize,
    dim: usize,
    x: DVector<f64>,
    e: DVector<f64>,
    /// Stacked local gradients `∇f_i(x_i)`.
    pub local_grad: DVector<f64>,
    /// Stacked per-agent averaged gradients `g_i`.
    pub g: DVector<f64>,
    /// Block-diagonal per-agent averaged Hessians `h_i`.
    pub h: DMatrix<f64>,
}

impl IterationState {
    /// State with exact averages of the local gradients and Hessians.
    pub fn observe(k: usize, x: DVector<f64>, b: &IncidenceMap, objectives: &ObjectiveSet) -> Result<Self> {
        let local_grad = objectives.stacked_gradient(&x)?;
        let n = objectives.n();
        let p = objectives.dim();
        let mean_g = linalg::averaging_operator(n, p) * &local_grad;
        let hess = objectives.local_hessians(&x)?;
        let mut mean_h = DMatrix::zeros(p, p);
        for h in &hess {
            mean_h += h;
        }
        mean_h /= n as f64;
        let h = linalg::block_diag(&vec![linalg::symmetrize(&mean_h); n]);
        Self::new(k, x, b, p, local_grad, mean_g, h)
    }

    pub fn new(
        k: usize,
        x: DVector<f64>,
        b: &IncidenceMap,
        p: usize,
        local_grad: DVector<f64>,
        g: DVector<f64>,
        h: DMatrix<f64>,
    ) -> Result<Self> {
        let n = b.n();
        let np = n * p;
        for (what, len) in [("state", x.len()), ("local gradient", local_grad.len()), ("averaged gradient", g.len())] {
            if len != np {
                return Err(Error::Parameter(format!("{what} has length {len}, expected {np}")));
            }
        }
        if h.shape() != (np, np) {
            return Err(Error::dim("averaged Hessian", np, h.nrows()));
        }
        let e = b.errors(&x, p)?;
        Ok(Self {
            k,
            n,
            dim: p,
            x,
            e,
            local_grad,
            g,
            h,
        })
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn e(&self) -> &DVector<f64> {
        &self.e
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Per-agent averaged gradient `g_i`.
    pub fn g_block(&self, i: usize) -> DVector<f64> {
        self.g.rows(i * self.dim, self.dim).into_owned()
    }

    /// Per-agent averaged Hessian `h_i`.
    pub fn h_block(&self, i: usize) -> DMatrix<f64> {
        let o = i * self.dim;
        self.h.view((o, o), (self.dim, self.dim)).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { eta: f64 },
    /// `η(k) = c / (k + 1)`.
    Harmonic { c: f64 },
}

impl StepSchedule {
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::Harmonic { c } => c / (k as f64 + 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Constant { eta } if eta >= 0.0 && eta.is_finite() => Ok(()),
            StepSchedule::Harmonic { c } if c > 0.0 && c.is_finite() => Ok(()),
            _ => Err(Error::Parameter(format!("invalid step schedule {self:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub eta: f64,
    pub inner_cap: Option<usize>,
    pub dgd_schedule: StepSchedule,
    pub tol_grad: f64,
    pub tol_edge: f64,
    pub max_iter: usize,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            eta: 0.5,
            inner_cap: None,
            dgd_schedule: StepSchedule::Harmonic { c: 1.0 },
            tol_grad: 1e-9,
            tol_edge: 1e-9,
            max_iter: 1000,
        }
    }
}

impl AlgorithmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Parameter(format!("eta must be positive, got {}", self.eta)));
        }
        if self.tol_grad < 0.0 || self.tol_edge < 0.0 {
            return Err(Error::Parameter("tolerances must be nonnegative".into()));
        }
        self.dgd_schedule.validate()
    }

    /// Check `η < 2/m2`.
    pub fn check_eta(&self, m2: f64) -> Result<()> {
        if self.eta >= 2.0 / m2 {
            return Err(Error::Parameter(format!("eta {} must be below 2/m2 = {}", self.eta, 2.0 / m2)));
        }
        Ok(())
    }

    /// Inner-loop length at outer iteration `k`.
    pub fn inner_steps(&self, k: usize) -> usize {
        self.inner_cap.map_or(k, |cap| cap.min(k))
    }
}

/// `x_i(k+1) = Σ_j W_ij x_j(k) − η(k) ∇f_i(x_i(k))`.
pub fn dgd_step(state: &IterationState, w: &DMatrix<f64>, schedule: &StepSchedule) -> Result<DVector<f64>> {
    if w.shape() != (state.n, state.n) {
        return Err(Error::dim("mixing matrix", state.n, w.nrows()));
    }
    let mixed = linalg::kron_identity(w, state.dim) * &state.x;
    Ok(mixed - &state.local_grad * schedule.at(state.k))
}

fn check_riccati(state: &IterationState, riccati: &RiccatiSolution) -> Result<()> {
    let np = state.n * state.dim;
    if riccati.gamma().nrows() != np || riccati.p().nrows() != state.e.len() {
        return Err(Error::dim("Riccati solution vs state", np, riccati.gamma().nrows()));
    }
    Ok(())
}

/// DOCMC direction by the inner loop
/// `d_0 = −(Γ_P+h)⁻¹(g + BᵀPe)`, `d_l = −(Γ_P+h)⁻¹(g − Γ_P d_{l−1})`.
pub fn docmc_direction(state: &IterationState, riccati: &RiccatiSolution, inner_steps: usize) -> Result<DVector<f64>> {
    check_riccati(state, riccati)?;
    let a = linalg::symmetrize(&(riccati.gamma() + &state.h));
    let chol = a.cholesky().ok_or(Error::Singular {
        context: "Γ_P + h",
        condition: f64::INFINITY,
    })?;
    let mut d = -chol.solve(&(&state.g + riccati.feedback(&state.e)?));
    for _ in 0..inner_steps {
        d = -chol.solve(&(&state.g - riccati.gamma() * &d));
    }
    Ok(d)
}

/// Closed form of the uncapped DOCMC loop at iteration `k`:
/// `−[I − T^{k+1}] h⁻¹ g − T^{k+1} Γ_P⁻¹ BᵀPe` with `T = (Γ_P+h)⁻¹Γ_P`.
pub fn docmc_direction_closed(state: &IterationState, riccati: &RiccatiSolution) -> Result<DVector<f64>> {
    check_riccati(state, riccati)?;
    let gamma = riccati.gamma();
    let a = linalg::symmetrize(&(gamma + &state.h));
    let t = linalg::spd_solve(&a, gamma, "Γ_P + h")?;
    let tk = linalg::matrix_power(&t, state.k + 1);
    let newton = linalg::spd_solve_vec(&state.h, &state.g, "averaged Hessian h")?;
    let feedback = linalg::spd_solve_vec(gamma, &riccati.feedback(&state.e)?, "Γ_P")?;
    Ok(-(&newton - &tk * &newton) - &tk * feedback)
}

/// DOAOC direction `d̄_0 = −η(g + BᵀPe)`, `d̄_l = −ηg + (I − ηh) d̄_{l−1}`.
pub fn doaoc_direction(state: &IterationState, riccati: &RiccatiSolution, eta: f64, inner_steps: usize) -> Result<DVector<f64>> {
    check_riccati(state, riccati)?;
    let mut d = -(&state.g + riccati.feedback(&state.e)?) * eta;
    for _ in 0..inner_steps {
        d = &d - (&state.g + &state.h * &d) * eta;
    }
    Ok(d)
}

/// Per-agent DOAOC loop from `d̄_i^0 = −η(g_i + (BᵀPe)_i)`.
pub fn doaoc_direction_agent(
    g_i: &DVector<f64>,
    h_i: &DMatrix<f64>,
    feedback_i: &DVector<f64>,
    eta: f64,
    inner_steps: usize,
) -> DVector<f64> {
    let mut d = -(g_i + feedback_i) * eta;
    for _ in 0..inner_steps {
        d = &d - (g_i + h_i * &d) * eta;
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub enum CentralizedVariant {
    /// Star-network reduction with `R` in place of `Γ_P`.
    Exact { r: DMatrix<f64> },
    /// Scalar-step reduction.
    Eta { eta: f64 },
}

/// One e-free step on a single consensus state `x ∈ R^p`:
/// `x − [I − T^{k+1}] h⁻¹ g` with `T = (R + h)⁻¹R` or `T = I − ηh`.
pub fn centralized_step(
    x: &DVector<f64>,
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    variant: &CentralizedVariant,
    k: usize,
) -> Result<DVector<f64>> {
    let p = x.len();
    if g.len() != p || h.shape() != (p, p) {
        return Err(Error::dim("centralized step", p, g.len()));
    }
    let t = match variant {
        CentralizedVariant::Exact { r } => linalg::spd_solve(&linalg::symmetrize(&(r + h)), r, "R + h")?,
        CentralizedVariant::Eta { eta } => DMatrix::identity(p, p) - h * *eta,
    };
    let tk = linalg::matrix_power(&t, k + 1);
    let newton = linalg::spd_solve_vec(h, g, "averaged Hessian h")?;
    Ok(x - (&newton - tk * &newton))
}

/// `x + d` with `d = −Γ_P⁻¹BᵀPe`.
pub fn consensus_only_step(state: &IterationState, riccati: &RiccatiSolution) -> Result<DVector<f64>> {
    check_riccati(state, riccati)?;
    let d = linalg::spd_solve_vec(riccati.gamma(), &riccati.feedback(&state.e)?, "Γ_P")?;
    Ok(&state.x - d)
}

/// Eigenvalues of `(Γ_P + h)⁻¹Γ_P`, via the similar symmetric matrix
/// `Γ_P^{1/2}(Γ_P + h)⁻¹Γ_P^{1/2}`.
pub fn docmc_spectrum(riccati: &RiccatiSolution, h: &DMatrix<f64>) -> Result<Vec<f64>> {
    let root = linalg::spd_sqrt(riccati.gamma())?;
    let inner = linalg::spd_solve(&linalg::symmetrize(&(riccati.gamma() + h)), &root, "Γ_P + h")?;
    Ok(linalg::sym_eigenvalues(&(&root * inner)))
}

/// `ρ((Γ_P + h)⁻¹Γ_P)`.
pub fn docmc_rate(riccati: &RiccatiSolution, h: &DMatrix<f64>) -> Result<f64> {
    Ok(docmc_spectrum(riccati, h)?.last().copied().unwrap_or(0.0))
}

/// `‖I − ηh‖₂` for symmetric `h`.
pub fn doaoc_rate(h: &DMatrix<f64>, eta: f64) -> f64 {
    linalg::sym_spectral_norm(&(DMatrix::identity(h.nrows(), h.ncols()) - h * eta))
}
