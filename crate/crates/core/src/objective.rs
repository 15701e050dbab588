//! Local objective functions with value / gradient / Hessian oracles.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Quadratic,
    Logistic,
    Custom,
}

/// One agent's smooth local objective `f_i : R^p → R`.
pub trait LocalObjective: Send + Sync {
    fn dim(&self) -> usize;
    fn kind(&self) -> ObjectiveKind;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `f(x) = ½ (x − b)ᵀ A (x − b)` with `A` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl QuadraticObjective {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.len() {
            return Err(Error::dim("quadratic objective", b.len(), a.nrows()));
        }
        let scale = linalg::max_abs(&a).max(1.0);
        if linalg::asymmetry(&a) > 1e-12 * scale {
            return Err(Error::Parameter("quadratic matrix A is not symmetric".into()));
        }
        if linalg::sym_eigenvalues(&a)[0] <= 0.0 {
            return Err(Error::Parameter("quadratic matrix A is not positive definite".into()));
        }
        Ok(Self { a, b })
    }

    /// Random quadratic whose Hessian spectrum is drawn uniformly from
    /// `[m1, m2]`, with a random orthogonal eigenbasis and a standard normal
    /// target scaled by `target_scale`.
    pub fn random<R: Rng + ?Sized>(p: usize, m1: f64, m2: f64, target_scale: f64, rng: &mut R) -> Result<Self> {
        if !(0.0 < m1 && m1 <= m2) {
            return Err(Error::Parameter(format!("need 0 < m1 <= m2, got [{m1}, {m2}]")));
        }
        let g = DMatrix::<f64>::from_fn(p, p, |_, _| rng.sample(StandardNormal));
        let q = g.qr().q();
        let eig = DVector::from_fn(p, |_, _| m1 + (m2 - m1) * rng.random::<f64>());
        let a = linalg::symmetrize(&(&q * DMatrix::from_diagonal(&eig) * q.transpose()));
        let b = DVector::from_fn(p, |_, _| target_scale * rng.sample::<f64, _>(StandardNormal));
        Self::new(a, b)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
}

impl LocalObjective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Quadratic
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.b;
        0.5 * d.dot(&(&self.a * &d))
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * (x - &self.b)
    }
    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
}

/// ℓ2-regularized logistic loss
/// `f(x) = Σ_j w_j log(1 + exp(−y_j a_jᵀ x)) + (λ/2)‖x‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticObjective {
    features: DMatrix<f64>,
    labels: DVector<f64>,
    weights: DVector<f64>,
    lambda: f64,
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticObjective {
    /// `features` is `m × p` (one sample per row); labels must be ±1.
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>, weights: DVector<f64>, lambda: f64) -> Result<Self> {
        let m = features.nrows();
        if labels.len() != m {
            return Err(Error::dim("logistic labels", m, labels.len()));
        }
        if weights.len() != m {
            return Err(Error::dim("logistic sample weights", m, weights.len()));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::Parameter("logistic labels must be +1 or -1".into()));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Parameter("logistic sample weights must be nonnegative".into()));
        }
        if lambda <= 0.0 {
            return Err(Error::Parameter("logistic regularizer must be positive".into()));
        }
        Ok(Self {
            features,
            labels,
            weights,
            lambda,
        })
    }

    /// Synthetic separable-with-noise data: `samples` standard normal
    /// feature rows, labels from a random hyperplane with 10% flips, and
    /// uniform sample weights `1/samples`.
    pub fn random<R: Rng + ?Sized>(p: usize, samples: usize, lambda: f64, rng: &mut R) -> Result<Self> {
        let features = DMatrix::<f64>::from_fn(samples, p, |_, _| rng.sample(StandardNormal));
        let truth = DVector::<f64>::from_fn(p, |_, _| rng.sample(StandardNormal));
        let labels = DVector::from_fn(samples, |j, _| {
            let s = if features.row(j).transpose().dot(&truth) >= 0.0 { 1.0 } else { -1.0 };
            if rng.random::<f64>() < 0.1 {
                -s
            } else {
                s
            }
        });
        let weights = DVector::from_element(samples, 1.0 / samples.max(1) as f64);
        Self::new(features, labels, weights, lambda)
    }

    /// Hessian bounds `[λ, λ + λ_max(Σ w_j a_j a_jᵀ)/4]`.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        let weighted = DMatrix::from_diagonal(&self.weights);
        let gram = self.features.transpose() * weighted * &self.features;
        let top = linalg::sym_eigenvalues(&gram).last().copied().unwrap_or(0.0).max(0.0);
        (self.lambda, self.lambda + 0.25 * top)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl LocalObjective for LogisticObjective {
    fn dim(&self) -> usize {
        self.features.ncols()
    }
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Logistic
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        let margins = &self.features * x;
        let loss: f64 = (0..margins.len())
            .map(|j| self.weights[j] * softplus(-self.labels[j] * margins[j]))
            .sum();
        loss + 0.5 * self.lambda * x.norm_squared()
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let margins = &self.features * x;
        let coeffs = DVector::from_fn(margins.len(), |j, _| {
            -self.weights[j] * self.labels[j] * sigmoid(-self.labels[j] * margins[j])
        });
        self.features.transpose() * coeffs + x * self.lambda
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let margins = &self.features * x;
        let curv = DVector::from_fn(margins.len(), |j, _| {
            let s = sigmoid(margins[j]);
            self.weights[j] * s * (1.0 - s)
        });
        let h = self.features.transpose() * DMatrix::from_diagonal(&curv) * &self.features;
        linalg::symmetrize(&h) + DMatrix::identity(x.len(), x.len()) * self.lambda
    }
}

/// The agents' local objectives together with declared curvature bounds
/// `m1 I ⪯ ∇²f_i ⪯ m2 I`.
#[derive(Clone)]
pub struct ObjectiveSet {
    dim: usize,
    objectives: Vec<Arc<dyn LocalObjective>>,
    m1: f64,
    m2: f64,
}

impl fmt::Debug for ObjectiveSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectiveSet")
            .field("n", &self.objectives.len())
            .field("dim", &self.dim)
            .field("kinds", &self.kinds())
            .field("m1", &self.m1)
            .field("m2", &self.m2)
            .finish()
    }
}

impl ObjectiveSet {
    pub fn new(objectives: Vec<Arc<dyn LocalObjective>>, m1: f64, m2: f64) -> Result<Self> {
        let first = objectives
            .first()
            .ok_or_else(|| Error::Parameter("objective set must not be empty".into()))?;
        let dim = first.dim();
        if let Some(bad) = objectives.iter().find(|o| o.dim() != dim) {
            return Err(Error::dim("objective set", dim, bad.dim()));
        }
        if !(m1 > 0.0 && m1 <= m2 && m2.is_finite()) {
            return Err(Error::Parameter(format!("need 0 < m1 <= m2 < inf, got [{m1}, {m2}]")));
        }
        Ok(Self {
            dim,
            objectives,
            m1,
            m2,
        })
    }

    /// Quadratics with bounds taken from the extreme eigenvalues of the `A_i`.
    pub fn quadratics(items: Vec<QuadraticObjective>) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for q in &items {
            let ev = linalg::sym_eigenvalues(q.a());
            lo = lo.min(ev[0]);
            hi = hi.max(ev[ev.len() - 1]);
        }
        Self::new(items.into_iter().map(|q| Arc::new(q) as Arc<dyn LocalObjective>).collect(), lo, hi)
    }

    pub fn logistics(items: Vec<LogisticObjective>) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for l in &items {
            let (a, b) = l.curvature_bounds();
            lo = lo.min(a);
            hi = hi.max(b);
        }
        Self::new(items.into_iter().map(|l| Arc::new(l) as Arc<dyn LocalObjective>).collect(), lo, hi)
    }

    pub fn n(&self) -> usize {
        self.objectives.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.m1, self.m2)
    }

    pub fn kinds(&self) -> Vec<ObjectiveKind> {
        self.objectives.iter().map(|o| o.kind()).collect()
    }

    pub fn get(&self, i: usize) -> Result<&dyn LocalObjective> {
        self.objectives
            .get(i)
            .map(|o| o.as_ref())
            .ok_or_else(|| Error::Parameter(format!("agent index {i} out of range for {} objectives", self.n())))
    }

    fn check(&self, i: usize, x: &DVector<f64>) -> Result<&dyn LocalObjective> {
        let f = self.get(i)?;
        if x.len() != self.dim {
            return Err(Error::dim("objective argument", self.dim, x.len()));
        }
        Ok(f)
    }

    pub fn value(&self, i: usize, x: &DVector<f64>) -> Result<f64> {
        Ok(self.check(i, x)?.value(x))
    }

    pub fn gradient(&self, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.check(i, x)?.gradient(x))
    }

    pub fn hessian(&self, i: usize, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.check(i, x)?.hessian(x))
    }

    /// Symmetrized forward-difference Jacobian of the gradient with step
    /// `step · (1 + ‖x‖)`.
    pub fn fd_hessian(&self, i: usize, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>> {
        if !(step > 0.0) {
            return Err(Error::Parameter(format!("finite-difference step must be positive, got {step}")));
        }
        let f = self.check(i, x)?;
        let h = step * (1.0 + x.norm());
        let g0 = f.gradient(x);
        let mut jac = DMatrix::zeros(self.dim, self.dim);
        for c in 0..self.dim {
            let mut xp = x.clone();
            xp[c] += h;
            jac.set_column(c, &((f.gradient(&xp) - &g0) / h));
        }
        Ok(linalg::symmetrize(&jac))
    }

    /// Central-difference gradient of `f_i` with step `step · (1 + ‖x‖)`.
    pub fn fd_gradient(&self, i: usize, x: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
        if !(step > 0.0) {
            return Err(Error::Parameter(format!("finite-difference step must be positive, got {step}")));
        }
        let f = self.check(i, x)?;
        let h = step * (1.0 + x.norm());
        Ok(DVector::from_fn(self.dim, |c, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            (f.value(&xp) - f.value(&xm)) / (2.0 * h)
        }))
    }

    /// Relative errors of the analytic gradient and Hessian of `f_i` at `x`
    /// against finite differences.
    pub fn derivative_errors(&self, i: usize, x: &DVector<f64>) -> Result<(f64, f64)> {
        let g = self.gradient(i, x)?;
        let h = self.hessian(i, x)?;
        let g_err = (&g - self.fd_gradient(i, x, 1e-6)?).norm() / g.norm().max(1e-8);
        let h_err = (&h - self.fd_hessian(i, x, 1e-6)?).norm() / h.norm().max(1e-8);
        Ok((g_err, h_err))
    }

    /// `F(y) = Σ_i f_i(y)` at a common point.
    pub fn total_value(&self, y: &DVector<f64>) -> Result<f64> {
        (0..self.n()).map(|i| self.value(i, y)).sum()
    }

    pub fn total_gradient(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(self.dim);
        for i in 0..self.n() {
            g += self.gradient(i, y)?;
        }
        Ok(g)
    }

    pub fn total_hessian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.n() {
            h += self.hessian(i, y)?;
        }
        Ok(h)
    }

    /// Stacked local gradients `∇f(x) = [∇f_1(x_1); …; ∇f_n(x_n)]`.
    pub fn stacked_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_stacked(x)?;
        let parts: Result<Vec<_>> = linalg::blocks(x, self.dim)
            .iter()
            .enumerate()
            .map(|(i, xi)| self.gradient(i, xi))
            .collect();
        Ok(linalg::stack(&parts?))
    }

    /// Local Hessians `∇²f_i(x_i)`, one per agent.
    pub fn local_hessians(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_stacked(x)?;
        linalg::blocks(x, self.dim)
            .iter()
            .enumerate()
            .map(|(i, xi)| self.hessian(i, xi))
            .collect()
    }

    fn check_stacked(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n() * self.dim {
            return Err(Error::dim("stacked state", self.n() * self.dim, x.len()));
        }
        Ok(())
    }

    /// Centralized minimizer of `F` by damped Newton with Armijo
    /// backtracking; stops once `‖∇F‖ ≤ tol`.
    pub fn reference_minimizer(&self, tol: f64) -> Result<DVector<f64>> {
        const MAX_ITER: usize = 200;
        let mut y = DVector::zeros(self.dim);
        let mut grad = self.total_gradient(&y)?;
        for _ in 0..MAX_ITER {
            if grad.norm() <= tol {
                return Ok(y);
            }
            let hess = self.total_hessian(&y)?;
            let dir = match hess.cholesky() {
                Some(ch) => -ch.solve(&grad),
                None => -grad.clone(),
            };
            let f0 = self.total_value(&y)?;
            let slope = grad.dot(&dir);
            let mut t = 1.0;
            let mut next = &y + &dir;
            while t > 1e-12 && self.total_value(&next)? > f0 + 1e-4 * t * slope {
                t *= 0.5;
                next = &y + &dir * t;
            }
            let next_grad = self.total_gradient(&next)?;
            // Near the optimum rounding can stall the line search; keep the
            // Newton step whenever it does not increase the gradient norm.
            if t <= 1e-12 && next_grad.norm() > grad.norm() {
                break;
            }
            y = next;
            grad = next_grad;
        }
        if grad.norm() <= tol {
            return Ok(y);
        }
        Err(Error::NonConvergence {
            what: "reference minimizer",
            iterations: MAX_ITER,
            last_change: grad.norm(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quad(a: DMatrix<f64>, b: &[f64]) -> QuadraticObjective {
        QuadraticObjective::new(a, DVector::from_row_slice(b)).unwrap()
    }

    fn central_gradient(f: &dyn LocalObjective, x: &DVector<f64>) -> DVector<f64> {
        let h = 1e-6 * (1.0 + x.norm());
        DVector::from_fn(x.len(), |c, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            (f.value(&xp) - f.value(&xm)) / (2.0 * h)
        })
    }

    #[test]
    fn quadratic_value_and_gradient() {
        let set = ObjectiveSet::quadratics(vec![quad(DMatrix::identity(2, 2), &[0.0, 0.0])]).unwrap();
        let origin = DVector::zeros(2);
        let x = DVector::from_row_slice(&[3.0, 4.0]);
        assert_eq!(set.value(0, &origin).unwrap(), 0.0);
        assert_eq!(set.value(0, &x).unwrap(), 12.5);
        assert_eq!(set.gradient(0, &x).unwrap(), x);
        assert!(set.value(0, &DVector::zeros(3)).is_err());
        assert!(set.gradient(1, &x).is_err());
    }

    #[test]
    fn gradient_vanishes_at_target() {
        let set = ObjectiveSet::quadratics(vec![quad(DMatrix::identity(2, 2) * 2.0, &[1.0, 1.0])]).unwrap();
        let x = DVector::from_row_slice(&[1.0, 1.0]);
        assert_eq!(set.gradient(0, &x).unwrap(), DVector::zeros(2));
        assert_eq!(set.hessian(0, &x).unwrap(), DMatrix::identity(2, 2) * 2.0);
    }

    #[test]
    fn rejects_indefinite_quadratic() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(QuadraticObjective::new(a, DVector::zeros(2)).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QuadraticObjective::new(asym, DVector::zeros(2)).is_err());
    }

    #[test]
    fn logistic_with_zero_weights_is_regularizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = LogisticObjective::random(3, 5, 0.3, &mut rng).unwrap();
        let zeroed = LogisticObjective::new(base.features.clone(), base.labels.clone(), DVector::zeros(5), 0.3).unwrap();
        let x = DVector::from_row_slice(&[0.4, -1.0, 2.0]);
        assert!((zeroed.value(&x) - 0.15 * x.norm_squared()).abs() < 1e-15);
        assert!((zeroed.gradient(&x) - &x * 0.3).norm() < 1e-15);
    }

    #[test]
    fn logistic_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = LogisticObjective::random(3, 12, 0.1, &mut rng).unwrap();
        let set = ObjectiveSet::logistics(vec![f.clone()]).unwrap();
        let (m1, m2) = set.bounds();
        for _ in 0..10 {
            let x = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal) * 2.0);
            let g = f.gradient(&x);
            let fd = central_gradient(&f, &x);
            assert!((&g - &fd).norm() <= 1e-5 * g.norm().max(1.0), "gradient mismatch");
            let h = f.hessian(&x);
            assert!(linalg::asymmetry(&h) <= 1e-10);
            let fd_h = set.fd_hessian(0, &x, 1e-5).unwrap();
            assert!(linalg::max_abs(&(&h - fd_h)) < 1e-3);
            let ev = linalg::sym_eigenvalues(&h);
            assert!(ev[0] >= m1 - 1e-8 && ev[2] <= m2 + 1e-8);
        }
    }

    #[test]
    fn fd_hessian_on_quadratic_and_bad_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = QuadraticObjective::random(3, 1.0, 4.0, 1.0, &mut rng).unwrap();
        let a = q.a().clone();
        let set = ObjectiveSet::quadratics(vec![q]).unwrap();
        let x = DVector::from_row_slice(&[0.3, -2.0, 1.0]);
        for step in [1e-2, 1e-4, 1e-6] {
            assert!(linalg::max_abs(&(set.fd_hessian(0, &x, step).unwrap() - &a)) < 1e-8);
        }
        assert!(set.fd_hessian(0, &x, 0.0).is_err());
        assert!(set.fd_hessian(0, &x, -1.0).is_err());
    }

    #[test]
    fn random_quadratic_respects_declared_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let q = QuadraticObjective::random(4, 0.5, 3.0, 1.0, &mut rng).unwrap();
            let ev = linalg::sym_eigenvalues(q.a());
            assert!(ev[0] >= 0.5 - 1e-12 && ev[3] <= 3.0 + 1e-12);
        }
    }

    #[test]
    fn minimizer_of_identity_quadratics_is_mean_target() {
        let set = ObjectiveSet::quadratics(vec![
            quad(DMatrix::identity(2, 2), &[1.0, 2.0]),
            quad(DMatrix::identity(2, 2), &[3.0, -2.0]),
            quad(DMatrix::identity(2, 2), &[-1.0, 3.0]),
        ])
        .unwrap();
        let x = set.reference_minimizer(1e-12).unwrap();
        assert!((x - DVector::from_row_slice(&[1.0, 1.0])).norm() < 1e-12);
    }

    #[test]
    fn minimizer_of_general_quadratics_matches_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let qs: Vec<_> = (0..4).map(|_| QuadraticObjective::random(3, 0.5, 5.0, 2.0, &mut rng).unwrap()).collect();
        let sum_a = qs.iter().fold(DMatrix::zeros(3, 3), |acc, q| acc + q.a());
        let sum_ab = qs.iter().fold(DVector::zeros(3), |acc, q| acc + q.a() * q.b());
        let expected = sum_a.lu().solve(&sum_ab).unwrap();
        let set = ObjectiveSet::quadratics(qs).unwrap();
        let x = set.reference_minimizer(1e-12).unwrap();
        assert!(set.total_gradient(&x).unwrap().norm() <= 1e-12);
        assert!((x - expected).norm() < 1e-10);
    }

    #[test]
    fn single_agent_minimizer() {
        let set = ObjectiveSet::quadratics(vec![quad(DMatrix::identity(1, 1) * 3.0, &[2.5])]).unwrap();
        let x = set.reference_minimizer(1e-12).unwrap();
        assert!((x[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn logistic_minimizer_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let items: Vec<_> = (0..3).map(|_| LogisticObjective::random(2, 20, 0.05, &mut rng).unwrap()).collect();
        let set = ObjectiveSet::logistics(items).unwrap();
        let x = set.reference_minimizer(1e-10).unwrap();
        assert!(set.total_gradient(&x).unwrap().norm() <= 1e-10);
    }
}
