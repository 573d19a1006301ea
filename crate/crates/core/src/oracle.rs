//! Ground truth by exhaustive enumeration and numeric checks of the
//! inequalities behind the approximation guarantee.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{DesignError, Result};
use crate::relaxation::DesignInstance;
use crate::sampler::{esp_sum_table, pad_greedy, HardCoreMeasure, Mode, SubsetSelection};
use crate::symfun::{aopt_objective, gen_ratio_objective, regularized_esp, GenRatioParams};
use crate::util::{binomial_u128, for_each_subset, spectral_norm_sym};

/// Largest number of subsets any enumeration will visit.
pub const ENUM_BUDGET: u128 = 2_000_000;

fn sizes(mode: Mode, k: usize) -> std::ops::RangeInclusive<usize> {
    match mode {
        Mode::Exact => k..=k,
        Mode::AtMost => 0..=k,
    }
}

fn check_budget(n: usize, mode: Mode, k: usize, budget: u128) -> Result<()> {
    let count = sizes(mode, k).fold(0u128, |acc, s| acc.saturating_add(binomial_u128(n, s)));
    if count > budget {
        return Err(DesignError::TooLarge { count, budget });
    }
    Ok(())
}

/// A normalized distribution over the sets with positive weight.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedDistribution {
    pub support: Vec<(Vec<usize>, f64)>,
    pub mode: Mode,
    pub n: usize,
    pub k: usize,
    /// Exact probabilities aligned with `support`, when computed in rational arithmetic.
    pub exact: Option<Vec<BigRational>>,
}

impl EnumeratedDistribution {
    fn from_weights(weights: Vec<(Vec<usize>, f64)>, mode: Mode, n: usize, k: usize) -> Result<Self> {
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        if !(total > 0.0) {
            return Err(DesignError::DegenerateMeasure);
        }
        let support = weights.into_iter().filter(|(_, w)| *w > 0.0).map(|(s, w)| (s, w / total)).collect();
        Ok(Self { support, mode, n, k, exact: None })
    }

    pub fn probability(&self, s: &[usize]) -> f64 {
        self.support.iter().find(|(t, _)| t.as_slice() == s).map_or(0.0, |(_, p)| *p)
    }

    pub fn expectation(&self, mut f: impl FnMut(&[usize]) -> Result<f64>) -> Result<f64> {
        let mut acc = 0.0;
        for (s, p) in &self.support {
            acc += p * f(s)?;
        }
        Ok(acc)
    }

    /// Total-variation distance to `other`, over the union of supports.
    pub fn tv_distance(&self, mut other: impl FnMut(&[usize]) -> Result<f64>) -> Result<f64> {
        let mut tv = 0.0;
        let mut seen = 0.0;
        for (s, p) in &self.support {
            let q = other(s)?;
            tv += (p - q).abs();
            seen += q;
        }
        // mass the other distribution puts outside this support
        tv += (1.0 - seen).max(0.0);
        Ok(tv / 2.0)
    }
}

/// Weights `z^S E_l(V_S V_S^T + lambda I)`, normalized over the mode's support.
pub fn enumerate_mu_prime(
    m: &HardCoreMeasure,
    inst: &DesignInstance,
    params: GenRatioParams,
) -> Result<EnumeratedDistribution> {
    enumerate_mu_prime_with_budget(m, inst, params, ENUM_BUDGET)
}

pub fn enumerate_mu_prime_with_budget(
    m: &HardCoreMeasure,
    inst: &DesignInstance,
    params: GenRatioParams,
    budget: u128,
) -> Result<EnumeratedDistribution> {
    let n = inst.n();
    if m.n() != n {
        return Err(DesignError::DimensionMismatch(format!("measure has {} weights, n = {n}", m.n())));
    }
    check_budget(n, m.mode, inst.k, budget)?;
    let mut weights = Vec::new();
    for size in sizes(m.mode, inst.k) {
        let mut err = None;
        for_each_subset(n, size, |s| {
            let zs: f64 = s.iter().map(|&i| m.z[i]).product();
            // rank(V_S V_S^T) <= |S|, so E_l vanishes exactly below l without a regularizer
            if zs == 0.0 || (inst.lambda == 0.0 && size < params.l_hi) {
                return;
            }
            match regularized_esp(&inst.subset_gram(s), inst.lambda, params.l_hi) {
                Ok(e) => weights.push((s.to_vec(), zs * e.max(0.0))),
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    EnumeratedDistribution::from_weights(weights, m.mode, n, inst.k)
}

/// Hard-core distribution `mu(S) ∝ z^S` on the mode's support.
pub fn enumerate_hard_core(z: &[f64], k: usize, mode: Mode) -> Result<EnumeratedDistribution> {
    let n = z.len();
    check_budget(n, mode, k, ENUM_BUDGET)?;
    let mut weights = Vec::new();
    for size in sizes(mode, k) {
        for_each_subset(n, size, |s| weights.push((s.to_vec(), s.iter().map(|&i| z[i]).product())));
    }
    EnumeratedDistribution::from_weights(weights, mode, n, k)
}

fn rational(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| DesignError::InvalidParams(format!("{x} has no exact rational value")))
}

fn rational_det(mut a: Vec<Vec<BigRational>>) -> BigRational {
    let n = a.len();
    let mut det = BigRational::one();
    for col in 0..n {
        let Some(piv) = (col..n).find(|&r| !a[r][col].is_zero()) else {
            return BigRational::zero();
        };
        if piv != col {
            a.swap(piv, col);
            det = -det;
        }
        let p = a[col][col].clone();
        det *= &p;
        for row in col + 1..n {
            if a[row][col].is_zero() {
                continue;
            }
            let f = &a[row][col] / &p;
            for c in col..n {
                let sub = &f * &a[col][c];
                a[row][c] -= sub;
            }
        }
    }
    det
}

/// [`enumerate_mu_prime`] in exact rational arithmetic.
///
/// Every float input is converted to the rational it represents, and
/// `E_h(V_S^T V_S)` is the sum of the Gram determinants of the `h`-subsets of `S`.
pub fn enumerate_mu_prime_exact(
    m: &HardCoreMeasure,
    inst: &DesignInstance,
    params: GenRatioParams,
) -> Result<EnumeratedDistribution> {
    let (d, n) = inst.v.shape();
    check_budget(n, m.mode, inst.k, ENUM_BUDGET)?;
    let l = params.l_hi;
    let v: Vec<Vec<BigRational>> =
        (0..n).map(|i| (0..d).map(|r| rational(inst.v[(r, i)])).collect()).collect::<Result<_>>()?;
    let z: Vec<BigRational> = m.z.iter().map(|&x| rational(x)).collect::<Result<_>>()?;
    let lambda = rational(inst.lambda)?;
    let dot = |a: usize, b: usize| -> BigRational { v[a].iter().zip(&v[b]).map(|(x, y)| x * y).sum() };

    let mut gram_det: HashMap<Vec<usize>, BigRational> = HashMap::new();
    for h in 0..=l.min(inst.k) {
        for_each_subset(n, h, |t| {
            let g = t.iter().map(|&a| t.iter().map(|&b| dot(a, b)).collect()).collect();
            gram_det.insert(t.to_vec(), rational_det(g));
        });
    }
    let coef: Vec<BigRational> = (0..=l)
        .map(|h| {
            let c = BigRational::from_integer(BigInt::from(binomial_u128(d - h, l - h)));
            c * num_traits::pow(lambda.clone(), l - h)
        })
        .collect();

    let mut weights: Vec<(Vec<usize>, BigRational)> = Vec::new();
    for size in sizes(m.mode, inst.k) {
        for_each_subset(n, size, |s| {
            let zs: BigRational = s.iter().map(|&i| z[i].clone()).product();
            if zs.is_zero() {
                return;
            }
            let mut e = BigRational::zero();
            for h in 0..=l.min(size) {
                let mut eh = BigRational::zero();
                for_each_subset(size, h, |pos| {
                    let t: Vec<usize> = pos.iter().map(|&p| s[p]).collect();
                    eh += &gram_det[&t];
                });
                e += &coef[h] * eh;
            }
            if !e.is_zero() {
                weights.push((s.to_vec(), zs * e));
            }
        });
    }
    let total: BigRational = weights.iter().map(|(_, w)| w.clone()).sum();
    if total.is_zero() {
        return Err(DesignError::DegenerateMeasure);
    }
    let exact: Vec<BigRational> = weights.iter().map(|(_, w)| w / &total).collect();
    let support = weights
        .into_iter()
        .zip(&exact)
        .map(|((s, _), p)| (s, p.to_f64().unwrap_or(f64::NAN)))
        .collect();
    Ok(EnumeratedDistribution { support, mode: m.mode, n, k: inst.k, exact: Some(exact) })
}

/// Exact minimizer over `|S| = k`; ties keep the lexicographically first set.
pub fn brute_force_opt(inst: &DesignInstance, params: GenRatioParams) -> Result<SubsetSelection> {
    brute_force_opt_with_budget(inst, params, ENUM_BUDGET)
}

pub fn brute_force_opt_with_budget(
    inst: &DesignInstance,
    params: GenRatioParams,
    budget: u128,
) -> Result<SubsetSelection> {
    check_budget(inst.n(), Mode::Exact, inst.k, budget)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut err = None;
    for_each_subset(inst.n(), inst.k, |s| match gen_ratio_objective(&inst.subset_gram(s), inst.lambda, params) {
        Ok(f) => {
            if best.as_ref().is_none_or(|(_, b)| f < *b) {
                best = Some((s.to_vec(), f));
            }
        }
        Err(DesignError::DegenerateSpectrum { .. }) => {}
        Err(e) => err = Some(e),
    });
    if let Some(e) = err {
        return Err(e);
    }
    let (indices, objective) =
        best.ok_or_else(|| DesignError::Infeasible("no size-k subset has a finite objective".into()))?;
    Ok(SubsetSelection {
        sampled: indices.clone(),
        indices,
        objective,
        padded: false,
        sampled_objective: Some(objective),
    })
}

/// `E[f(S)]` under `dist` for the generalized ratio objective, optionally
/// after completing each set to size `k` the way the sampler does.
pub fn expected_objective(
    dist: &EnumeratedDistribution,
    inst: &DesignInstance,
    params: GenRatioParams,
    padded: bool,
) -> Result<f64> {
    dist.expectation(|s| {
        let set = if padded && s.len() < inst.k { pad_greedy(inst, s)? } else { s.to_vec() };
        gen_ratio_objective(&inst.subset_gram(&set), inst.lambda, params)
    })
}

/// Source of `Pr[S ⊇ T]` for a distribution over subsets.
pub trait InclusionProbabilities {
    fn n(&self) -> usize;
    fn k(&self) -> usize;
    fn joint_inclusion(&self, t: &[usize]) -> Result<f64>;
}

impl InclusionProbabilities for EnumeratedDistribution {
    fn n(&self) -> usize {
        self.n
    }

    fn k(&self) -> usize {
        self.k
    }

    fn joint_inclusion(&self, t: &[usize]) -> Result<f64> {
        Ok(self.support.iter().filter(|(s, _)| t.iter().all(|i| s.contains(i))).map(|(_, p)| p).sum())
    }
}

/// Inclusion probabilities of the hard-core measure `mu(S) ∝ z^S`, read off
/// anchored sum tables with only the degree-zero column.
#[derive(Debug, Clone)]
pub struct HardCoreMarginals {
    z: Vec<f64>,
    k: usize,
    mode: Mode,
    placeholder: DMatrix<f64>,
}

impl HardCoreMarginals {
    pub fn new(z: Vec<f64>, k: usize, mode: Mode) -> Self {
        let placeholder = DMatrix::zeros(1, z.len());
        Self { z, k, mode, placeholder }
    }
}

impl InclusionProbabilities for HardCoreMarginals {
    fn n(&self) -> usize {
        self.z.len()
    }

    fn k(&self) -> usize {
        self.k
    }

    fn joint_inclusion(&self, t: &[usize]) -> Result<f64> {
        if t.len() > self.k {
            return Ok(0.0);
        }
        let rows = sizes(self.mode, self.k);
        let all = esp_sum_table(&self.z, &self.placeholder, &[], &[], self.k, 0)?.contract(rows.clone(), &[1.0]);
        let part = esp_sum_table(&self.z, &self.placeholder, t, &[], self.k, 0)?.contract(rows, &[1.0]);
        part.ratio(&all).ok_or(DesignError::DegenerateMeasure)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NearPairwiseCert {
    pub c_measured: f64,
    pub alpha: f64,
    pub witness_t: Vec<usize>,
    pub witness_r: Vec<usize>,
    /// `1 / (1 - exp(-((beta-1)k - beta d)^2 / (3 beta k)))` with `beta = alpha`,
    /// present when `(beta-1)k > beta d`.
    pub c_lemma: Option<f64>,
    /// The bound applies and `c_measured <= c_lemma`.
    pub valid: bool,
}

pub fn lemma_constant(beta: f64, k: usize, d: usize) -> Option<f64> {
    let gap = (beta - 1.0) * k as f64 - beta * d as f64;
    (gap > 0.0).then(|| 1.0 / (1.0 - (-(gap * gap) / (3.0 * beta * k as f64)).exp()))
}

/// Smallest `c` with `Pr[S ⊇ T] / Pr[S ⊇ R] <= c alpha^{|R|-|T|} x^T / x^R` over
/// all `T`, `R` of size at most `d`.
///
/// The ratio separates into a factor in `T` and one in `R`, so the two maxima
/// are taken independently. Sets with `x^T = 0` or `x^R = 0` are skipped.
pub fn certify_near_pairwise(
    mu: &impl InclusionProbabilities,
    x: &[f64],
    alpha: f64,
    d: usize,
) -> Result<NearPairwiseCert> {
    let n = mu.n();
    if x.len() != n {
        return Err(DesignError::DimensionMismatch(format!("x has length {}, n = {n}", x.len())));
    }
    let admissible: Vec<usize> = (0..n).filter(|&i| x[i] > 0.0).collect();
    let mut best_t = (f64::NEG_INFINITY, Vec::new());
    let mut best_r = (f64::NEG_INFINITY, Vec::new());
    for size in 0..=d.min(admissible.len()) {
        let mut err = None;
        for_each_subset(admissible.len(), size, |pos| {
            if err.is_some() {
                return;
            }
            let set: Vec<usize> = pos.iter().map(|&p| admissible[p]).collect();
            let xs: f64 = set.iter().map(|&i| x[i]).product();
            let p = match mu.joint_inclusion(&set) {
                Ok(p) => p,
                Err(e) => {
                    err = Some(e);
                    return;
                }
            };
            let scale = alpha.powi(size as i32);
            let t_factor = p * scale / xs;
            if t_factor > best_t.0 {
                best_t = (t_factor, set.clone());
            }
            if p <= 0.0 {
                err = Some(DesignError::ZeroSupport(set));
                return;
            }
            let r_factor = xs / (scale * p);
            if r_factor > best_r.0 {
                best_r = (r_factor, set);
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    let c_measured = best_t.0 * best_r.0;
    let c_lemma = lemma_constant(alpha, mu.k(), d);
    Ok(NearPairwiseCert {
        c_measured,
        alpha,
        witness_t: best_t.1,
        witness_r: best_r.1,
        c_lemma,
        valid: c_lemma.is_some_and(|c| c_measured <= c * (1.0 + 1e-12)),
    })
}

/// Outcome of a numeric check of one inequality `lhs <= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    /// Whether the hypotheses of the statement are met; when false `holds` is vacuous.
    pub hypothesis: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Why the check was not evaluated, if it was skipped.
    pub skipped: Option<String>,
}

impl InequalityReport {
    fn compare(hypothesis: bool, lhs: f64, rhs: f64, rel_slack: f64) -> Self {
        let holds = !hypothesis || lhs <= rhs + rel_slack * rhs.abs();
        Self { hypothesis, lhs, rhs, holds, skipped: None }
    }

    fn skip(reason: impl Into<String>) -> Self {
        Self { hypothesis: false, lhs: f64::NAN, rhs: f64::NAN, holds: true, skipped: Some(reason.into()) }
    }
}

/// `E_{mu'}[tr(Z_S(lambda)^{-1})] <= c alpha tr((V(x)V(x)^T + alpha lambda I)^{-1})`
/// with `mu'(S) ∝ z^S det(Z_S(lambda))` enumerated exactly.
pub fn check_theorem_43(m: &HardCoreMeasure, inst: &DesignInstance, c: f64, alpha: f64) -> Result<InequalityReport> {
    let x = m
        .x
        .as_ref()
        .ok_or_else(|| DesignError::InvalidParams("measure carries no fractional point".into()))?;
    let d = inst.d();
    let params = GenRatioParams::a_optimal(d);
    let dist = enumerate_mu_prime(m, inst, params)?;
    let lhs = dist.expectation(|s| gen_ratio_objective(&inst.subset_gram(s), inst.lambda, params))?;
    let gram = inst.fractional_gram(&DVector::from_column_slice(x));
    let rhs = c * alpha * aopt_objective(&gram, alpha * inst.lambda)?;
    Ok(InequalityReport::compare(true, lhs, rhs, 1e-10))
}

/// If `k >= 2 beta d / (beta - 1) + 3 beta / (beta - 1)^2 log(1 / eps')` then
/// `exp(-((beta-1)k - beta d)^2 / (3 beta k)) <= eps'`.
pub fn check_claim_62(eps_prime: f64, beta: f64, k: usize, d: usize) -> InequalityReport {
    if !(eps_prime > 0.0 && beta > 1.0) {
        return InequalityReport::skip("requires eps' > 0 and beta > 1");
    }
    let (kf, df) = (k as f64, d as f64);
    let threshold = 2.0 * beta * df / (beta - 1.0) + 3.0 * beta / (beta - 1.0).powi(2) * (1.0 / eps_prime).ln();
    let gap = (beta - 1.0) * kf - beta * df;
    let lhs = (-(gap * gap) / (3.0 * beta * kf)).exp();
    InequalityReport::compare(kf >= threshold, lhs, eps_prime, 0.0)
}

/// `E_{d-1}/E_d(M + beta lam I) <= (1 + lam/||M||) / (1 + beta lam/||M||) * E_{d-1}/E_d(M + lam I)`.
pub fn check_claim_63(m: &DMatrix<f64>, beta: f64, lam: f64) -> Result<InequalityReport> {
    let norm = spectral_norm_sym(m);
    if !(norm > 0.0) || beta < 0.0 || lam < 0.0 {
        return Ok(InequalityReport::skip("requires ||M|| > 0 and beta, lambda >= 0"));
    }
    let lhs = aopt_objective(m, beta * lam)?;
    let rhs = (1.0 + lam / norm) / (1.0 + beta * lam / norm) * aopt_objective(m, lam)?;
    Ok(InequalityReport::compare(true, lhs, rhs, 1e-12))
}

/// Distribution of a sum of independent Bernoulli variables.
pub fn poisson_binomial(probs: &[f64]) -> Vec<f64> {
    let mut dist = vec![1.0];
    for &p in probs {
        let mut next = vec![0.0; dist.len() + 1];
        for (c, &q) in dist.iter().enumerate() {
            next[c] += q * (1.0 - p);
            next[c + 1] += q * p;
        }
        dist = next;
    }
    dist
}

/// Exact `Pr[Y > k - |R|]` for `Y = sum_{i not in R} Bernoulli(x_i / beta)` against
/// `exp(-((beta-1)k + x(R) - beta|R|)^2 / (3 beta (k - x(R))))`.
pub fn check_chernoff_35(x: &[f64], r: &[usize], beta: f64, k: usize) -> InequalityReport {
    let kf = k as f64;
    let x_r: f64 = r.iter().map(|&i| x[i]).sum();
    let spread = kf - x_r;
    if !(spread > 1e-12) {
        return InequalityReport::skip("k - x(R) vanishes");
    }
    if r.len() > k {
        return InequalityReport::skip("|R| exceeds k");
    }
    let gap = (beta - 1.0) * kf + x_r - beta * r.len() as f64;
    if !(gap > 0.0) {
        return InequalityReport::skip("exponent is not negative");
    }
    let probs: Vec<f64> = (0..x.len()).filter(|i| !r.contains(i)).map(|i| x[i] / beta).collect();
    let dist = poisson_binomial(&probs);
    let tail: f64 = dist.iter().skip(k - r.len() + 1).sum();
    let bound = (-(gap * gap) / (3.0 * beta * spread)).exp();
    InequalityReport::compare(true, tail, bound, 1e-12)
}

#[cfg(test)]
mod tests;
