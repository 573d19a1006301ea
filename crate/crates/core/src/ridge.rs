//! Ridge regression on a selected subset: estimator, closed-form error
//! distributions and expected squared errors, and a Monte Carlo check of both.
//!
//! With `y_S = V_S^T w* + eta`, `eta ~ N(0, sigma^2 I)` and `Z = V_S V_S^T + lambda I`,
//! the error `w_hat - w*` is Gaussian with mean `-lambda Z^{-1} w*` and
//! covariance `sigma^2 (Z^{-1} - lambda Z^{-2})`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{DesignError, Result};
use crate::relaxation::DesignInstance;
use crate::util::{select_columns, subset_gram, symmetrize};

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub w_star: DVector<f64>,
    pub sigma2: f64,
    pub lam: f64,
    /// Prediction matrix (`d x m`); the design matrix `V` when absent.
    pub x: Option<DMatrix<f64>>,
}

impl RidgeModel {
    pub fn new(w_star: DVector<f64>, sigma2: f64, lam: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(DesignError::InvalidParams(format!("noise variance must be positive, got {sigma2}")));
        }
        if !(lam >= 0.0) || !lam.is_finite() {
            return Err(DesignError::InvalidParams(format!("lambda must be >= 0, got {lam}")));
        }
        Ok(Self { w_star, sigma2, lam, x: None })
    }

    pub fn with_prediction_matrix(mut self, x: DMatrix<f64>) -> Self {
        self.x = Some(x);
        self
    }

    fn prediction_matrix<'a>(&'a self, inst: &'a DesignInstance) -> &'a DMatrix<f64> {
        self.x.as_ref().unwrap_or(&inst.v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDistribution {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl ErrorDistribution {
    /// `E ||e||^2 = ||mean||^2 + tr(cov)`.
    pub fn mean_sq_norm(&self) -> f64 {
        self.mean.norm_squared() + self.covariance.trace()
    }

    /// Distribution of `A e`.
    pub fn pushforward(&self, a: &DMatrix<f64>) -> ErrorDistribution {
        ErrorDistribution { mean: a * &self.mean, covariance: a * &self.covariance * a.transpose() }
    }
}

/// `Z^{-1}`, `Z^{-2}` and `Z^{-1} - lambda Z^{-2}` from one eigendecomposition.
struct Resolvent {
    inv: DMatrix<f64>,
    inv2: DMatrix<f64>,
    cov_core: DMatrix<f64>,
}

fn resolvent(inst: &DesignInstance, s: &[usize], lam: f64) -> Result<Resolvent> {
    if let Some(&i) = s.iter().find(|&&i| i >= inst.n()) {
        return Err(DesignError::InvalidParams(format!("index {i} out of range")));
    }
    let gram = symmetrize(&subset_gram(&inst.v, s));
    let scale = gram.norm().max(lam).max(f64::MIN_POSITIVE);
    let eig = SymmetricEigen::new(gram);
    let u = &eig.eigenvectors;
    let build = |f: &dyn Fn(f64) -> f64| -> DMatrix<f64> {
        let diag = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&g| f(g.max(0.0))));
        u * DMatrix::from_diagonal(&diag) * u.transpose()
    };
    if eig.eigenvalues.iter().any(|&g| g.max(0.0) + lam <= 1e-13 * scale) {
        return Err(DesignError::SingularMatrix);
    }
    Ok(Resolvent {
        inv: build(&|g| 1.0 / (g + lam)),
        inv2: build(&|g| 1.0 / (g + lam).powi(2)),
        cov_core: build(&|g| g / (g + lam).powi(2)),
    })
}

/// `Z_S(lambda)^{-1} V_S y_S`.
pub fn ridge_estimate(v_s: &DMatrix<f64>, y_s: &DVector<f64>, lam: f64) -> Result<DVector<f64>> {
    if v_s.ncols() != y_s.len() {
        return Err(DesignError::DimensionMismatch(format!("{} vectors but {} responses", v_s.ncols(), y_s.len())));
    }
    let d = v_s.nrows();
    let z = v_s * v_s.transpose() + DMatrix::identity(d, d) * lam;
    let chol = z.cholesky().ok_or(DesignError::SingularMatrix)?;
    Ok(chol.solve(&(v_s * y_s)))
}

pub fn model_error_dist(s: &[usize], model: &RidgeModel, inst: &DesignInstance) -> Result<ErrorDistribution> {
    let r = resolvent(inst, s, model.lam)?;
    Ok(ErrorDistribution { mean: -(&r.inv * &model.w_star) * model.lam, covariance: r.cov_core * model.sigma2 })
}

pub fn prediction_error_dist(s: &[usize], model: &RidgeModel, inst: &DesignInstance) -> Result<ErrorDistribution> {
    let x = model.prediction_matrix(inst);
    Ok(model_error_dist(s, model, inst)?.pushforward(&x.transpose()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SqErrors {
    pub model_err: f64,
    pub prediction_err: f64,
}

/// `<A, B> = tr(A^T B)`.
fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

pub fn expected_sq_errors(s: &[usize], model: &RidgeModel, inst: &DesignInstance) -> Result<SqErrors> {
    let r = resolvent(inst, s, model.lam)?;
    let d = inst.d();
    let (sigma2, lam) = (model.sigma2, model.lam);
    let shaped = DMatrix::identity(d, d) * sigma2 - &model.w_star * model.w_star.transpose() * lam;
    let x = model.prediction_matrix(inst);
    let xxt = x * x.transpose();
    let model_err = sigma2 * r.inv.trace() - lam * inner(&r.inv2, &shaped);
    let prediction_err =
        sigma2 * (x.transpose() * &r.inv * x).trace() - lam * inner(&(&r.inv * &xxt * &r.inv), &shaped);
    Ok(SqErrors { model_err, prediction_err })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskBoundReport {
    /// `lambda <= sigma^2 / ||w*||^2`.
    pub hypothesis: bool,
    pub errors: SqErrors,
    pub model_bound: f64,
    pub prediction_bound: f64,
    pub holds: bool,
}

/// Under `lambda <= sigma^2/||w*||^2`, both expected errors are at most their
/// `sigma^2 tr(...)` variance terms.
pub fn check_bound_eq5(s: &[usize], model: &RidgeModel, inst: &DesignInstance) -> Result<RiskBoundReport> {
    let r = resolvent(inst, s, model.lam)?;
    let errors = expected_sq_errors(s, model, inst)?;
    let x = model.prediction_matrix(inst);
    let model_bound = model.sigma2 * r.inv.trace();
    let prediction_bound = model.sigma2 * (x.transpose() * &r.inv * x).trace();
    let hypothesis = model.lam * model.w_star.norm_squared() <= model.sigma2;
    let slack = |b: f64| 1e-12 * b.abs().max(1e-300);
    let holds = !hypothesis
        || (errors.model_err <= model_bound + slack(model_bound)
            && errors.prediction_err <= prediction_bound + slack(prediction_bound));
    Ok(RiskBoundReport { hypothesis, errors, model_bound, prediction_bound, holds })
}

/// Sample mean and covariance with per-entry standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub mean: DVector<f64>,
    pub mean_se: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub covariance_se: DMatrix<f64>,
}

impl EmpiricalMoments {
    pub fn from_samples(samples: &[DVector<f64>]) -> Self {
        let dim = samples.first().map_or(0, |s| s.len());
        let nf = samples.len() as f64;
        let mean = samples.iter().fold(DVector::zeros(dim), |acc, e| acc + e) / nf;
        let mut covariance = DMatrix::zeros(dim, dim);
        let mut second = DMatrix::zeros(dim, dim);
        for e in samples {
            let c = e - &mean;
            let outer = &c * c.transpose();
            second += outer.component_mul(&outer);
            covariance += outer;
        }
        covariance /= nf - 1.0;
        // each covariance entry is a mean of centered products; its spread gives the error
        let covariance_se = (second / nf - covariance.component_mul(&covariance)).map(|v| (v.max(0.0) / nf).sqrt());
        let mean_se = covariance.diagonal().map(|v| (v / nf).sqrt());
        Self { mean, mean_se, covariance, covariance_se }
    }

    /// Largest `|empirical - expected| / se` over all mean and covariance entries.
    pub fn max_z_score(&self, expected: &ErrorDistribution) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.mean.len() {
            worst = worst.max((self.mean[i] - expected.mean[i]).abs() / self.mean_se[i]);
            for j in 0..self.mean.len() {
                let dev = (self.covariance[(i, j)] - expected.covariance[(i, j)]).abs();
                worst = worst.max(dev / self.covariance_se[(i, j)]);
            }
        }
        worst
    }
}

/// Monte Carlo summary of the model error `w_hat - w*` and prediction error `X^T (w_hat - w*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub draws: usize,
    pub model: EmpiricalMoments,
    pub prediction: EmpiricalMoments,
    pub model_sq: f64,
    pub model_sq_se: f64,
    pub prediction_sq: f64,
    pub prediction_sq_se: f64,
}

fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Draws `eta ~ N(0, noise_var I)` (ziggurat standard normals from a
/// ChaCha8 stream seeded with `seed`), refits, and summarizes the errors.
/// `noise_var` defaults to the model's `sigma^2`.
pub fn simulate_errors(
    s: &[usize],
    model: &RidgeModel,
    inst: &DesignInstance,
    draws: usize,
    seed: u64,
    noise_var: Option<f64>,
) -> Result<MonteCarloSummary> {
    if draws < 2 {
        return Err(DesignError::InvalidParams("need at least two draws".into()));
    }
    let d = inst.d();
    let v_s = select_columns(&inst.v, s);
    let z = &v_s * v_s.transpose() + DMatrix::identity(d, d) * model.lam;
    let a = z.cholesky().ok_or(DesignError::SingularMatrix)?.solve(&v_s);
    let clean = v_s.transpose() * &model.w_star;
    let sd = noise_var.unwrap_or(model.sigma2).sqrt();
    let xt = model.prediction_matrix(inst).transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errs = Vec::with_capacity(draws);
    let mut preds = Vec::with_capacity(draws);
    for _ in 0..draws {
        let y = DVector::from_fn(s.len(), |i, _| clean[i] + sd * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        let e = &a * y - &model.w_star;
        preds.push(&xt * &e);
        errs.push(e);
    }
    let model_sq: Vec<f64> = errs.iter().map(|e| e.norm_squared()).collect();
    let pred_sq: Vec<f64> = preds.iter().map(|e| e.norm_squared()).collect();
    let (model_sq, model_sq_se) = mean_and_se(&model_sq);
    let (prediction_sq, prediction_sq_se) = mean_and_se(&pred_sq);
    Ok(MonteCarloSummary {
        draws,
        model: EmpiricalMoments::from_samples(&errs),
        prediction: EmpiricalMoments::from_samples(&preds),
        model_sq,
        model_sq_se,
        prediction_sq,
        prediction_sq_se,
    })
}

/// `d_lambda = tr(V^T (V V^T + lambda I)^{-1} V) = sum_i gamma_i / (gamma_i + lambda)`
/// over the eigenvalues of `V V^T`; zero eigenvalues contribute nothing.
pub fn effective_dimension(v: &DMatrix<f64>, lambda: f64) -> f64 {
    let gram = symmetrize(&(v * v.transpose()));
    let scale = gram.norm();
    SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .filter(|&&g| g > 1e-13 * scale)
        .map(|&g| g / (g + lambda))
        .sum()
}
