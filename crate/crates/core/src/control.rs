//! Riccati machinery: cost weights, the stable Riccati solution, the
//! averaging sequence `M(l)` and a finite-horizon consistency check of the
//! forward–backward difference equations.
//!
//! The error dynamics `e(k+1) = e(k) + B u(k)` can only reach the column
//! space of `B`; for any strongly connected graph the ordered-edge map has
//! a nontrivial cycle space `ker Bᵀ`, on which the backward recursion with a
//! positive definite `Q` grows without bound. The stable solution is
//! therefore computed with `Q` and `H` compressed onto `range(B)`. This
//! leaves `Γ_P`, `BᵀPB`, `BᵀPe` and the cost of every reachable error
//! unchanged.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::IncidenceMap;
use crate::linalg;

/// Largest condition number accepted for `Γ(k) = R + BᵀP(k+1)B`.
pub const MAX_GAMMA_CONDITION: f64 = 1e12;
pub const DEFAULT_RICCATI_TOL: f64 = 1e-10;
pub const DEFAULT_RICCATI_MAX_ITER: usize = 10_000;

/// Per-agent weights `Q_i ⪰ 0`, `R_i ≻ 0`, `H_i ⪰ 0`, each `p × p`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    q: Vec<DMatrix<f64>>,
    r: Vec<DMatrix<f64>>,
    h: Vec<DMatrix<f64>>,
}

fn check_block(m: &DMatrix<f64>, p: usize, name: &str, definite: bool) -> Result<()> {
    if m.nrows() != p || m.ncols() != p {
        return Err(Error::Parameter(format!("{name} block must be {p}x{p}")));
    }
    if linalg::asymmetry(m) > 1e-12 * linalg::max_abs(m).max(1.0) {
        return Err(Error::Parameter(format!("{name} block is not symmetric")));
    }
    if definite {
        if m.clone().cholesky().is_none() {
            return Err(Error::Parameter(format!("{name} block is not positive definite")));
        }
    } else if linalg::sym_eigenvalues(m)[0] < -1e-12 {
        return Err(Error::Parameter(format!("{name} block is not positive semidefinite")));
    }
    Ok(())
}

impl CostWeights {
    pub fn new(q: Vec<DMatrix<f64>>, r: Vec<DMatrix<f64>>, h: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = r.len();
        if n == 0 || q.len() != n || h.len() != n {
            return Err(Error::Parameter(format!(
                "need one Q, R, H block per agent (got {}, {}, {})",
                q.len(),
                r.len(),
                h.len()
            )));
        }
        let p = r[0].nrows();
        for i in 0..n {
            check_block(&q[i], p, "Q", false)?;
            check_block(&r[i], p, "R", true)?;
            check_block(&h[i], p, "H", false)?;
        }
        Ok(Self { q, r, h })
    }

    /// `Q_i = q_i I`, `R_i = r_i I`, `H_i = h_i I`.
    pub fn scalar(p: usize, q: &[f64], r: &[f64], h: &[f64]) -> Result<Self> {
        let eye = DMatrix::<f64>::identity(p, p);
        Self::new(
            q.iter().map(|&v| &eye * v).collect(),
            r.iter().map(|&v| &eye * v).collect(),
            h.iter().map(|&v| &eye * v).collect(),
        )
    }

    /// The same scalar multiples of the identity for every agent.
    pub fn uniform(n: usize, p: usize, q: f64, r: f64, h: f64) -> Result<Self> {
        Self::scalar(p, &vec![q; n], &vec![r; n], &vec![h; n])
    }

    pub fn identity(n: usize, p: usize) -> Self {
        Self::uniform(n, p, 1.0, 1.0, 1.0).expect("identity weights are valid")
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn dim(&self) -> usize {
        self.r[0].nrows()
    }

    pub fn q_blocks(&self) -> &[DMatrix<f64>] {
        &self.q
    }

    pub fn r_blocks(&self) -> &[DMatrix<f64>] {
        &self.r
    }

    pub fn h_blocks(&self) -> &[DMatrix<f64>] {
        &self.h
    }

    /// `R = diag(R_1, …, R_n)`.
    pub fn r_stacked(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.r)
    }

    /// `Q` on the stacked edge errors: edge `(i, j)` carries `Q_i`.
    pub fn q_edges(&self, b: &IncidenceMap) -> DMatrix<f64> {
        linalg::block_diag(&b.pairs().iter().map(|&(i, _)| self.q[i].clone()).collect::<Vec<_>>())
    }

    pub fn h_edges(&self, b: &IncidenceMap) -> DMatrix<f64> {
        linalg::block_diag(&b.pairs().iter().map(|&(i, _)| self.h[i].clone()).collect::<Vec<_>>())
    }

    fn check_against(&self, b: &IncidenceMap) -> Result<()> {
        if b.n() != self.n() {
            return Err(Error::dim("cost weights vs incidence map", b.n(), self.n()));
        }
        Ok(())
    }
}

/// Stable solution of the backward Riccati recursion and derived matrices.
#[derive(Debug, Clone, Serialize)]
pub struct RiccatiSolution {
    #[serde(skip)]
    p: DMatrix<f64>,
    #[serde(skip)]
    gamma: DMatrix<f64>,
    #[serde(skip)]
    r: DMatrix<f64>,
    #[serde(skip)]
    b: DMatrix<f64>,
    n: usize,
    dim: usize,
    pub residual: f64,
    pub asymmetry: f64,
    pub iterations: usize,
}

/// One backward step; returns `(P(k), Γ(k))`.
fn riccati_step(
    p_next: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let pb = p_next * b;
    let gamma = linalg::symmetrize(&(r + b.transpose() * &pb));
    let cond = linalg::spd_condition(&gamma);
    if cond > MAX_GAMMA_CONDITION {
        return Err(Error::Singular {
            context: "Riccati gain Γ(k)",
            condition: cond,
        });
    }
    let gain = linalg::spd_solve(&gamma, &pb.transpose(), "Riccati gain Γ(k)")?;
    Ok((linalg::symmetrize(&(q + p_next - &pb * gain)), gamma))
}

/// Iterate `P(k) = Q + P(k+1) − P(k+1) B Γ(k)⁻¹ Bᵀ P(k+1)` from `P = H`
/// until successive iterates differ by at most `tol` in max-norm.
pub fn solve_riccati(weights: &CostWeights, b: &IncidenceMap, tol: f64, max_iter: usize) -> Result<RiccatiSolution> {
    weights.check_against(b)?;
    let p_dim = weights.dim();
    let bx = b.expanded(p_dim);
    let proj = linalg::range_projector(&bx);
    let q = linalg::symmetrize(&(&proj * weights.q_edges(b) * &proj));
    let h = linalg::symmetrize(&(&proj * weights.h_edges(b) * &proj));
    let r = weights.r_stacked();

    let mut p = h;
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        let (next, _) = riccati_step(&p, &q, &r, &bx)?;
        change = linalg::max_abs(&(&next - &p));
        p = next;
        if change <= tol {
            let (again, gamma_next) = riccati_step(&p, &q, &r, &bx)?;
            let residual = linalg::max_abs(&(&again - &p));
            let gamma = gamma_next;
            return Ok(RiccatiSolution {
                asymmetry: linalg::asymmetry(&p),
                p,
                gamma,
                r,
                b: bx,
                n: weights.n(),
                dim: p_dim,
                residual,
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "Riccati recursion",
        iterations: max_iter,
        last_change: change,
    })
}

impl RiccatiSolution {
    /// `P = 0`, so `Γ_P = R`: the star-network reduction without edge errors.
    pub fn without_edge_cost(weights: &CostWeights, b: &IncidenceMap) -> Result<Self> {
        weights.check_against(b)?;
        let dim = weights.dim();
        let bx = b.expanded(dim);
        let r = weights.r_stacked();
        Ok(Self {
            p: DMatrix::zeros(bx.nrows(), bx.nrows()),
            gamma: r.clone(),
            r,
            b: bx,
            n: weights.n(),
            dim,
            residual: 0.0,
            asymmetry: 0.0,
            iterations: 0,
        })
    }

    /// Stable `P` on the stacked edge errors.
    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// `Γ_P = R + BᵀPB`.
    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// `B ⊗ I_p`.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `BᵀPB`.
    pub fn btpb(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(self.b.transpose() * &self.p * &self.b))
    }

    /// `L̄ = BᵀPBR⁻¹`.
    pub fn lbar(&self) -> DMatrix<f64> {
        let r_inv = linalg::spd_inverse(&self.r, "R").expect("R validated positive definite");
        self.btpb() * r_inv
    }

    /// `BᵀPe` for stacked edge errors `e`.
    pub fn feedback(&self, e: &DVector<f64>) -> Result<DVector<f64>> {
        if e.len() != self.p.nrows() {
            return Err(Error::dim("edge error vector", self.p.nrows(), e.len()));
        }
        Ok(self.b.transpose() * (&self.p * e))
    }

    /// One factor of the averaging sequence, `R Γ_P⁻¹`.
    pub fn m_factor(&self) -> DMatrix<f64> {
        // R Γ⁻¹ = (Γ⁻¹ R)ᵀ since both are symmetric.
        linalg::spd_solve(&self.gamma, &self.r, "Γ_P")
            .expect("Γ_P positive definite")
            .transpose()
    }

    /// `M(1) = I`, `M(l) = M(l−1) R Γ_P⁻¹`.
    pub fn m_sequence(&self, count: usize) -> Result<Vec<DMatrix<f64>>> {
        if count < 1 {
            return Err(Error::Parameter("M sequence needs count >= 1".into()));
        }
        let factor = self.m_factor();
        let dim = self.gamma.nrows();
        let mut out = Vec::with_capacity(count);
        out.push(DMatrix::identity(dim, dim));
        for l in 1..count {
            let next = &out[l - 1] * &factor;
            out.push(next);
        }
        Ok(out)
    }

    /// Limit of `M(l)`: the projector `L = R U (UᵀRU)⁻¹ Uᵀ` with
    /// `U = 1 ⊗ I_p`. It equals `(1/n) 1 1ᵀ ⊗ I_p` when all `R_i` agree.
    pub fn m_limit(&self) -> DMatrix<f64> {
        let u = linalg::kron_identity(&DMatrix::from_element(self.n, 1, 1.0), self.dim);
        let ru = &self.r * &u;
        let inner = linalg::spd_inverse(&(u.transpose() * &ru), "UᵀRU").expect("R positive definite");
        ru * inner * u.transpose()
    }

    /// `‖M(l) − (1/n) 1 1ᵀ‖_max`.
    ///
    /// Evaluated through `M(l) − L = (F − L)^{l−1}` for `l ≥ 2`, where
    /// `F = RΓ_P⁻¹` and `FL = LF = L`; the deflated powers keep relative
    /// accuracy instead of settling on a rounding floor.
    pub fn m_limit_distance(&self, l: usize) -> f64 {
        let target = linalg::averaging_operator(self.n, self.dim);
        if l <= 1 {
            let eye = DMatrix::identity(target.nrows(), target.ncols());
            return linalg::max_abs(&(eye - target));
        }
        let limit = self.m_limit();
        let deviation = linalg::matrix_power(&(self.m_factor() - &limit), l - 1);
        linalg::max_abs(&(deviation + limit - target))
    }

    /// Distance to the averaging operator together with the rank test that
    /// decides whether averaging is possible at all.
    pub fn check_m_limit(&self, l: usize, tol: f64) -> MLimitCheck {
        let expected_rank = (self.n - 1) * self.dim;
        let lbar_rank = linalg::sym_rank(&self.btpb(), 1e-9);
        let distance = self.m_limit_distance(l);
        let averaging_possible = lbar_rank == expected_rank;
        MLimitCheck {
            l,
            distance,
            lbar_rank,
            expected_rank,
            averaging_possible,
            converged: averaging_possible && distance <= tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MLimitCheck {
    pub l: usize,
    pub distance: f64,
    pub lbar_rank: usize,
    pub expected_rank: usize,
    pub averaging_possible: bool,
    pub converged: bool,
}

/// Finite-horizon Riccati sequence `P(0), …, P(N+1)` with the unmodified
/// edge weights, together with `Γ(0), …, Γ(N)`.
pub fn riccati_sequence(
    weights: &CostWeights,
    b: &IncidenceMap,
    horizon: usize,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    weights.check_against(b)?;
    let bx = b.expanded(weights.dim());
    let q = weights.q_edges(b);
    let r = weights.r_stacked();
    let mut ps = vec![DMatrix::zeros(0, 0); horizon + 2];
    let mut gammas = vec![DMatrix::zeros(0, 0); horizon + 1];
    ps[horizon + 1] = weights.h_edges(b);
    for k in (0..=horizon).rev() {
        let (p, g) = riccati_step(&ps[k + 1], &q, &r, &bx)?;
        ps[k] = p;
        gammas[k] = g;
    }
    Ok((ps, gammas))
}

/// `Σ_{l=start}^{N+1} M_start(l) ∇f(l)` with `M_start(start) = I` and
/// `M_start(l) = M_start(l−1) R Γ(l−1)⁻¹`.
fn future_gradient_sum(
    start: usize,
    grads: &[DVector<f64>],
    r: &DMatrix<f64>,
    gammas: &[DMatrix<f64>],
) -> Result<DVector<f64>> {
    let dim = r.nrows();
    let mut m = DMatrix::<f64>::identity(dim, dim);
    let mut acc = DVector::zeros(dim);
    for l in start..grads.len() {
        if l > start {
            let factor = linalg::spd_solve(&gammas[l - 1], r, "Γ(k)")?.transpose();
            m = &m * factor;
        }
        acc += &m * &grads[l];
    }
    Ok(acc)
}

/// States, controls, costates and errors of the finite-horizon problem
/// driven by an exogenous gradient schedule `∇f(0), …, ∇f(N+1)`.
#[derive(Debug, Clone)]
pub struct FbdeTrajectory {
    pub horizon: usize,
    pub dim: usize,
    /// `x(0), …, x(N+1)`.
    pub x: Vec<DVector<f64>>,
    /// `u(0), …, u(N)`.
    pub u: Vec<DVector<f64>>,
    /// `λ(−1), …, λ(N)`; entry `k` holds `λ(k−1)`.
    pub lambda: Vec<DVector<f64>>,
    /// `e(0), …, e(N+1)`.
    pub e: Vec<DVector<f64>>,
    pub grads: Vec<DVector<f64>>,
}

impl FbdeTrajectory {
    /// Forward pass with the closed-loop controller
    /// `u(k) = −Γ(k)⁻¹[BᵀP(k+1)e(k) + Σ_{l>k} M(l)∇f(l)]`, followed by the
    /// backward costate recursion from `λ(N) = BᵀHe(N+1) + ∇f(N+1)`.
    pub fn simulate(
        weights: &CostWeights,
        b: &IncidenceMap,
        x0: DVector<f64>,
        grads: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let dim = weights.dim();
        let np = weights.n() * dim;
        if grads.len() < 2 {
            return Err(Error::Parameter("gradient schedule needs at least N+2 = 2 entries".into()));
        }
        if x0.len() != np {
            return Err(Error::dim("FBDE initial state", np, x0.len()));
        }
        if let Some(g) = grads.iter().find(|g| g.len() != np) {
            return Err(Error::dim("FBDE gradient schedule", np, g.len()));
        }
        let horizon = grads.len() - 2;
        let (ps, gammas) = riccati_sequence(weights, b, horizon)?;
        let bx = b.expanded(dim);
        let r = weights.r_stacked();

        let mut x = vec![x0];
        let mut e = vec![&bx * &x[0]];
        let mut u = Vec::with_capacity(horizon + 1);
        for k in 0..=horizon {
            let rhs = bx.transpose() * (&ps[k + 1] * &e[k]) + future_gradient_sum(k + 1, &grads, &r, &gammas)?;
            let uk = -linalg::spd_solve_vec(&gammas[k], &rhs, "Γ(k)")?;
            let next = &x[k] + &uk;
            e.push(&bx * &next);
            x.push(next);
            u.push(uk);
        }

        let q = weights.q_edges(b);
        let h = weights.h_edges(b);
        let mut lambda = vec![DVector::zeros(np); horizon + 2];
        lambda[horizon + 1] = bx.transpose() * (&h * &e[horizon + 1]) + &grads[horizon + 1];
        for k in (0..=horizon).rev() {
            lambda[k] = bx.transpose() * (&q * &e[k]) + &grads[k] + &lambda[k + 1];
        }
        Ok(Self {
            horizon,
            dim,
            x,
            u,
            lambda,
            e,
            grads,
        })
    }

    /// `λ(k)` for `k ≥ −1`.
    pub fn costate(&self, k: isize) -> &DVector<f64> {
        &self.lambda[(k + 1) as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FbdeEquation {
    /// `x(k+1) = x(k) + u(k)`, `e = Bx`.
    Dynamics,
    /// `0 = R u(k) + λ(k)`.
    Equilibrium,
    /// `λ(k−1) = BᵀQe(k) + ∇f(k) + λ(k)` and its terminal value.
    Costate,
    /// Closed-form controller.
    Controller,
    /// Closed-form costate `λ(k−1) = BᵀP(k)e(k) + Σ_{l≥k} M(l)∇f(l)`.
    CostateClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FbdeResidual {
    pub equation: FbdeEquation,
    pub step: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FbdeReport {
    pub tol: f64,
    pub max_residual: f64,
    pub failures: Vec<FbdeResidual>,
    pub residuals: Vec<FbdeResidual>,
}

impl FbdeReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn max_for(&self, eq: FbdeEquation) -> f64 {
        self.residuals
            .iter()
            .filter(|r| r.equation == eq)
            .fold(0.0, |a, r| a.max(r.residual))
    }
}

/// Check every equation of the finite-horizon system along `traj`.
pub fn fbde_check(weights: &CostWeights, b: &IncidenceMap, traj: &FbdeTrajectory, tol: f64) -> Result<FbdeReport> {
    let n_steps = traj.horizon;
    let (ps, gammas) = riccati_sequence(weights, b, n_steps)?;
    let bx = b.expanded(weights.dim());
    let r = weights.r_stacked();
    let q = weights.q_edges(b);
    let h = weights.h_edges(b);
    let inf = |v: DVector<f64>| v.amax();

    let mut residuals = Vec::new();
    let mut push = |equation, step, residual| residuals.push(FbdeResidual { equation, step, residual });

    for k in 0..=n_steps + 1 {
        let dyn_res = if k <= n_steps {
            inf(&traj.x[k + 1] - &traj.x[k] - &traj.u[k])
        } else {
            0.0
        };
        push(FbdeEquation::Dynamics, k, dyn_res.max(inf(&bx * &traj.x[k] - &traj.e[k])));
    }
    for k in 0..=n_steps {
        push(FbdeEquation::Equilibrium, k, inf(&r * &traj.u[k] + traj.costate(k as isize)));
        let rhs = bx.transpose() * (&q * &traj.e[k]) + &traj.grads[k] + traj.costate(k as isize);
        push(FbdeEquation::Costate, k, inf(traj.costate(k as isize - 1) - rhs));
        let ctrl_rhs = bx.transpose() * (&ps[k + 1] * &traj.e[k]) + future_gradient_sum(k + 1, &traj.grads, &r, &gammas)?;
        let ctrl = -linalg::spd_solve_vec(&gammas[k], &ctrl_rhs, "Γ(k)")?;
        push(FbdeEquation::Controller, k, inf(&traj.u[k] - ctrl));
    }
    let terminal = bx.transpose() * (&h * &traj.e[n_steps + 1]) + &traj.grads[n_steps + 1];
    push(FbdeEquation::Costate, n_steps + 1, inf(traj.costate(n_steps as isize) - terminal));
    for k in 0..=n_steps + 1 {
        let closed = bx.transpose() * (&ps[k] * &traj.e[k]) + future_gradient_sum(k, &traj.grads, &r, &gammas)?;
        push(FbdeEquation::CostateClosedForm, k, inf(traj.costate(k as isize - 1) - closed));
    }

    let failures: Vec<FbdeResidual> = residuals.iter().filter(|r| !(r.residual <= tol)).cloned().collect();
    let max_residual = residuals.iter().fold(0.0_f64, |a, r| a.max(r.residual));
    Ok(FbdeReport {
        tol,
        max_residual,
        failures,
        residuals,
    })
}
