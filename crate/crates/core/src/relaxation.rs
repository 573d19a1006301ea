//! Convex relaxation over the capped simplex.
//!
//! Minimizes `tr((V(x)V(x)^T + lambda I)^{-1})` subject to `sum x_i = k`,
//! `0 <= x_i <= 1` with projected gradient and Armijo backtracking.

use nalgebra::{DMatrix, DVector};

use crate::error::{DesignError, Result};
use crate::symfun::aopt_objective;
use crate::util::{spectral_norm_sym, subset_gram, sym_eigenvalues, weighted_gram};

/// Tolerance on the box constraints of a fractional point.
pub const BOX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignInstance {
    /// `d x n`; column `i` is `v_i`.
    pub v: DMatrix<f64>,
    pub k: usize,
    pub lambda: f64,
}

impl DesignInstance {
    pub fn new(v: DMatrix<f64>, k: usize, lambda: f64) -> Result<Self> {
        let (d, n) = v.shape();
        if d == 0 || n == 0 {
            return Err(DesignError::InvalidInstance(format!("empty design matrix ({d}x{n})")));
        }
        if k == 0 || k > n {
            return Err(DesignError::Infeasible(format!("budget k = {k} must lie in 1..={n}")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(DesignError::InvalidInstance(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(DesignError::InvalidInstance("design matrix has non-finite entries".into()));
        }
        if lambda == 0.0 {
            let eig = sym_eigenvalues(&(&v * v.transpose()));
            let max = eig.last().copied().unwrap_or(0.0);
            if !(eig[0] > 1e-12 * max) {
                return Err(DesignError::InvalidInstance(
                    "lambda = 0 requires the vectors to span R^d".into(),
                ));
            }
        }
        Ok(Self { v, k, lambda })
    }

    pub fn n(&self) -> usize {
        self.v.ncols()
    }

    pub fn d(&self) -> usize {
        self.v.nrows()
    }

    /// `V(x) V(x)^T = sum_i x_i v_i v_i^T`.
    pub fn fractional_gram(&self, x: &DVector<f64>) -> DMatrix<f64> {
        weighted_gram(&self.v, x)
    }

    /// `V_S V_S^T`.
    pub fn subset_gram(&self, s: &[usize]) -> DMatrix<f64> {
        subset_gram(&self.v, s)
    }

    /// Regularized A-objective of a subset.
    pub fn subset_objective(&self, s: &[usize]) -> Result<f64> {
        aopt_objective(&self.subset_gram(s), self.lambda)
    }

    /// Same instance with a different regularizer.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.v.clone(), self.k, lambda)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FractionalSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `||x - P(x - eta grad f(x))||_inf` at the returned point.
    pub stationarity: f64,
    /// Objective after each accepted step, starting at the initial point.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 10_000 }
    }
}

fn check_fractional(inst: &DesignInstance, x: &DVector<f64>) -> Result<()> {
    if x.len() != inst.n() {
        return Err(DesignError::DimensionMismatch(format!(
            "x has length {}, instance has n = {}",
            x.len(),
            inst.n()
        )));
    }
    if x.iter().any(|&xi| !(xi >= -BOX_TOL && xi <= 1.0 + BOX_TOL)) {
        return Err(DesignError::InvalidParams("x must lie in [0, 1]^n".into()));
    }
    Ok(())
}

/// `tr((V(x)V(x)^T + lambda I)^{-1})`.
pub fn relax_objective(inst: &DesignInstance, x: &DVector<f64>) -> Result<f64> {
    check_fractional(inst, x)?;
    aopt_objective(&inst.fractional_gram(x), inst.lambda)
}

/// Component `i` is `-v_i^T (V(x)V(x)^T + lambda I)^{-2} v_i`.
pub fn relax_gradient(inst: &DesignInstance, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_fractional(inst, x)?;
    gradient_with_shift(inst, x, inst.lambda).ok_or(DesignError::SingularMatrix)
}

fn regularized(inst: &DesignInstance, x: &DVector<f64>, shift: f64) -> DMatrix<f64> {
    let d = inst.d();
    inst.fractional_gram(x) + DMatrix::identity(d, d) * shift
}

/// `Z^{-1} V` for `Z = V(x)V(x)^T + shift I`, or `None` if `Z` is not positive definite.
fn solve_columns(inst: &DesignInstance, x: &DVector<f64>, shift: f64) -> Option<DMatrix<f64>> {
    let ch = regularized(inst, x, shift).cholesky()?;
    Some(ch.solve(&inst.v))
}

fn gradient_with_shift(inst: &DesignInstance, x: &DVector<f64>, shift: f64) -> Option<DVector<f64>> {
    let y = solve_columns(inst, x, shift)?;
    Some(DVector::from_iterator(
        inst.n(),
        y.column_iter().map(|c| -c.norm_squared()),
    ))
}

fn fast_objective(inst: &DesignInstance, x: &DVector<f64>) -> f64 {
    match regularized(inst, x, inst.lambda).cholesky() {
        Some(ch) => {
            let t = ch.inverse().trace();
            if t.is_finite() && t > 0.0 {
                t
            } else {
                f64::INFINITY
            }
        }
        None => f64::INFINITY,
    }
}

/// Euclidean projection onto `{x in [0,1]^n : sum x = k}`.
pub fn project_capped_simplex(y: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
    let n = y.len();
    if k > n {
        return Err(DesignError::Infeasible(format!("k = {k} exceeds n = {n}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(DesignError::InvalidParams("projection input must be finite".into()));
    }
    if k == n {
        return Ok(DVector::from_element(n, 1.0));
    }
    if k == 0 {
        return Ok(DVector::zeros(n));
    }
    let target = k as f64;
    let total = |tau: f64| -> f64 { y.iter().map(|&v| (v - tau).clamp(0.0, 1.0)).sum() };

    let mut lo = y.min() - 1.0;
    let mut hi = y.max();
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * (1.0 + mid.abs()) {
            break;
        }
    }
    let mut tau = 0.5 * (lo + hi);

    // Exact shift from the active set identified by bisection.
    let mut n_upper = 0usize;
    let mut free_sum = 0.0;
    let mut n_free = 0usize;
    for &v in y.iter() {
        let u = v - tau;
        if u >= 1.0 {
            n_upper += 1;
        } else if u > 0.0 {
            free_sum += v;
            n_free += 1;
        }
    }
    if n_free > 0 {
        let exact = (free_sum - (target - n_upper as f64)) / n_free as f64;
        if (total(exact) - target).abs() <= (total(tau) - target).abs() {
            tau = exact;
        }
    }
    Ok(y.map(|v| (v - tau).clamp(0.0, 1.0)))
}

/// Largest eigenvalue of the Hessian at `x` by power iteration on
/// Hessian-vector products `(Hu)_i = 2 v_i^T (Y diag(u) Y^T) y_i`, `Y = Z^{-1} V`.
fn curvature_estimate(inst: &DesignInstance, x: &DVector<f64>, shift: f64) -> Option<f64> {
    let y = solve_columns(inst, x, shift)?;
    let n = inst.n();
    let mut u = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..100 {
        let c = weighted_gram(&y, &u);
        let mut hu = DVector::zeros(n);
        for i in 0..n {
            let cy = &c * y.column(i);
            hu[i] = 2.0 * inst.v.column(i).dot(&cy);
        }
        let norm = hu.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        let next = u.dot(&hu);
        u = hu / norm;
        if (next - est).abs() <= 1e-6 * next.abs() {
            est = next;
            break;
        }
        est = next;
    }
    Some(est.max(f64::MIN_POSITIVE))
}

fn stationarity(x: &DVector<f64>, g: &DVector<f64>, eta: f64, k: usize) -> Result<f64> {
    let p = project_capped_simplex(&(x - g * eta), k)?;
    Ok((x - p).amax())
}

/// Solves the relaxation from the barycenter `(k/n) 1`.
pub fn solve_relaxation(inst: &DesignInstance, tol: f64, max_iters: usize) -> Result<FractionalSolution> {
    let x0 = DVector::from_element(inst.n(), inst.k as f64 / inst.n() as f64);
    solve_relaxation_from(inst, x0, RelaxOptions { tol, max_iters })
}

pub fn solve_relaxation_from(
    inst: &DesignInstance,
    x0: DVector<f64>,
    opts: RelaxOptions,
) -> Result<FractionalSolution> {
    let k = inst.k;
    let mut x = project_capped_simplex(&x0, k)?;
    let shift = if inst.lambda > 0.0 {
        inst.lambda
    } else {
        inst.lambda + 1e-12 * spectral_norm_sym(&(&inst.v * inst.v.transpose()))
    };
    let grad = |x: &DVector<f64>| gradient_with_shift(inst, x, shift).ok_or(DesignError::SingularMatrix);

    let mut f = fast_objective(inst, &x);
    if !f.is_finite() {
        return Err(DesignError::SingularMatrix);
    }
    let curvature = curvature_estimate(inst, &x, shift).ok_or(DesignError::SingularMatrix)?;
    let eta0 = 1.0 / curvature;

    let mut g = grad(&x)?;
    let mut history = vec![f];
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut iterations = 0;
    let mut stat = stationarity(&x, &g, eta0, k)?;
    let mut converged = stat <= opts.tol;

    while !converged && iterations < opts.max_iters {
        // Barzilai-Borwein trial step, safeguarded around 1/L.
        let mut eta = match &prev {
            Some((xp, gp)) => {
                let s = &x - xp;
                let yv = &g - gp;
                let sy = s.dot(&yv);
                if sy > 0.0 {
                    (s.norm_squared() / sy).clamp(1e-2 * eta0, 1e8 * eta0)
                } else {
                    eta0
                }
            }
            None => eta0,
        };
        let mut accepted = None;
        for _ in 0..80 {
            let trial = project_capped_simplex(&(&x - &g * eta), k)?;
            let decrease = g.dot(&(&trial - &x));
            if decrease >= 0.0 {
                break;
            }
            let ft = fast_objective(inst, &trial);
            if ft <= f + 1e-4 * decrease {
                accepted = Some((trial, ft));
                break;
            }
            eta *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        debug_assert!(fnew <= f, "objective increased across an accepted step");
        let gn = grad(&xn)?;
        prev = Some((std::mem::replace(&mut x, xn), std::mem::replace(&mut g, gn)));
        f = fnew;
        history.push(f);
        iterations += 1;
        stat = stationarity(&x, &g, eta0, k)?;
        converged = stat <= opts.tol;
    }

    let objective = aopt_objective(&inst.fractional_gram(&x), inst.lambda)?;
    Ok(FractionalSolution { x, objective, iterations, converged, stationarity: stat, history })
}
