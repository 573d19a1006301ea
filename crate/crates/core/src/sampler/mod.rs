//! Regularized proportional volume sampling with hard-core weights.
//!
//! The target distribution over subsets is
//! `mu'(S) ∝ z^S E_l(V_S V_S^T + lambda I)` on either `|S| = k` or `|S| <= k`.
//! Sampling and derandomization walk the indices in ascending order and decide
//! each one from conditional sums of the generating polynomial.

mod engine;
mod nodes;
mod table;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};
use crate::relaxation::{DesignInstance, BOX_TOL};
use crate::symfun::{gen_ratio_objective, regularization_coeffs, GenRatioParams};
use crate::util::{spectral_norm_sym, subset_gram};
use engine::{clamp_probability, Engine};

pub use table::{esp_sum_table, EspSumTable, LogScaled};

/// Support of the subset distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Subsets of size exactly `k`.
    Exact,
    /// Subsets of size at most `k`, padded to `k` afterwards.
    AtMost,
}

impl std::str::FromStr for Mode {
    type Err = DesignError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" | "k" | "eq-k" => Ok(Mode::Exact),
            "at-most" | "le-k" | "at-most-k" => Ok(Mode::AtMost),
            _ => Err(DesignError::InvalidParams(format!("unknown mode {s:?} (use exact or at-most)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardCoreMeasure {
    pub z: Vec<f64>,
    pub beta: f64,
    pub lambda_prime: f64,
    pub epsilon: f64,
    pub mode: Mode,
    /// Fractional point the weights came from, if any.
    pub x: Option<Vec<f64>>,
}

impl HardCoreMeasure {
    /// Measure with explicit weights, not tied to a fractional point.
    pub fn with_weights(z: Vec<f64>, mode: Mode) -> Result<Self> {
        if z.iter().any(|&zi| !(zi >= 0.0) || !zi.is_finite()) {
            return Err(DesignError::InvalidParams("hard-core weights must be finite and non-negative".into()));
        }
        Ok(Self { z, beta: 1.0, lambda_prime: 0.0, epsilon: 0.0, mode, x: None })
    }

    pub fn uniform(n: usize, mode: Mode) -> Self {
        Self { z: vec![1.0; n], beta: 1.0, lambda_prime: 0.0, epsilon: 0.0, mode, x: None }
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }
}

/// `beta = 1 + (eps / 4) sqrt(1 + lambda')`, `z_i = x_i / (beta - x_i)`.
pub fn measure_from_fractional(
    x: &DVector<f64>,
    epsilon: f64,
    inst: &DesignInstance,
    mode: Mode,
) -> Result<HardCoreMeasure> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(DesignError::InvalidParams(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    if x.len() != inst.n() {
        return Err(DesignError::DimensionMismatch(format!("x has length {}, n = {}", x.len(), inst.n())));
    }
    let tol = BOX_TOL.max(1e-9);
    if x.iter().any(|&xi| !(xi >= -tol && xi <= 1.0 + tol)) || x.sum() > inst.k as f64 + 1e-6 {
        return Err(DesignError::Infeasible("fractional point violates the capped simplex".into()));
    }
    let x = x.map(|xi| xi.clamp(0.0, 1.0));
    let norm = spectral_norm_sym(&inst.fractional_gram(&x));
    let lambda_prime = if inst.lambda == 0.0 {
        0.0
    } else if norm > 0.0 {
        inst.lambda / norm
    } else {
        return Err(DesignError::DegenerateFractional);
    };
    let beta = 1.0 + epsilon / 4.0 * (1.0 + lambda_prime).sqrt();
    let z = x.iter().map(|&xi| xi / (beta - xi)).collect();
    Ok(HardCoreMeasure { z, beta, lambda_prime, epsilon, mode, x: Some(x.iter().copied().collect()) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSelection {
    /// Final set, ascending.
    pub indices: Vec<usize>,
    pub objective: f64,
    /// Whether indices were added after sampling to reach size `k`.
    pub padded: bool,
    /// Set before padding.
    pub sampled: Vec<usize>,
    /// Objective of the set before padding; `None` when it is not finite.
    pub sampled_objective: Option<f64>,
}

fn check_inputs(m: &HardCoreMeasure, inst: &DesignInstance, l: usize) -> Result<()> {
    if m.n() != inst.n() {
        return Err(DesignError::DimensionMismatch(format!("measure has {} weights, n = {}", m.n(), inst.n())));
    }
    if l > inst.d() {
        return Err(DesignError::InvalidParams(format!("l = {l} exceeds d = {}", inst.d())));
    }
    Ok(())
}

/// `Pr[i in S | I ⊆ S, J ∩ S = ∅]` for `S ~ mu'`, assembled from two sum tables.
pub fn marginal_probability(
    m: &HardCoreMeasure,
    inst: &DesignInstance,
    l: usize,
    anchors_in: &[usize],
    anchors_out: &[usize],
    i: usize,
) -> Result<f64> {
    check_inputs(m, inst, l)?;
    if i >= inst.n() || anchors_in.contains(&i) || anchors_out.contains(&i) {
        return Err(DesignError::InvalidAnchors(format!("index {i} is not free")));
    }
    let k = inst.k;
    let rows = match m.mode {
        Mode::Exact => k..=k,
        Mode::AtMost => 0..=k,
    };
    let coefs = regularization_coeffs(inst.d(), l, inst.lambda);
    let den = esp_sum_table(&m.z, &inst.v, anchors_in, anchors_out, k, l)?.contract(rows.clone(), &coefs);
    if den.is_zero() {
        return Err(DesignError::ZeroProbabilityCondition);
    }
    if anchors_in.len() >= k || m.z[i] == 0.0 {
        return Ok(0.0);
    }
    let mut with_i = anchors_in.to_vec();
    with_i.push(i);
    let num = esp_sum_table(&m.z, &inst.v, &with_i, anchors_out, k, l)?.contract(rows, &coefs);
    clamp_probability(num.ratio(&den).expect("nonzero denominator"))
}

/// Sequential sampler and derandomizer for one measure and objective.
pub struct VolumeSampler<'a> {
    inst: &'a DesignInstance,
    measure: &'a HardCoreMeasure,
    params: GenRatioParams,
}

impl<'a> VolumeSampler<'a> {
    pub fn new(inst: &'a DesignInstance, measure: &'a HardCoreMeasure, params: GenRatioParams) -> Result<Self> {
        check_inputs(measure, inst, params.l_hi)?;
        GenRatioParams::new(params.l_lo, params.l_hi, inst.d())?;
        Ok(Self { inst, measure, params })
    }

    fn engine(&self) -> Engine<'a> {
        let d = self.inst.d();
        Engine::new(
            &self.inst.v,
            &self.measure.z,
            self.inst.k,
            self.measure.mode,
            regularization_coeffs(d, self.params.l_hi, self.inst.lambda),
            regularization_coeffs(d, self.params.l_lo, self.inst.lambda),
            // without a regularizer, sets smaller than l_hi carry no mu' mass
            if self.inst.lambda == 0.0 { self.params.l_hi } else { 0 },
        )
    }

    fn start(&self) -> Result<Engine<'a>> {
        let mut eng = self.engine();
        if eng.total().hi.is_zero() {
            return Err(DesignError::DegenerateMeasure);
        }
        Ok(eng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SubsetSelection> {
        let mut eng = self.start()?;
        for i in 0..self.inst.n() {
            let p = eng.marginal(i)?;
            let include = if p <= 0.0 {
                false
            } else if p >= 1.0 {
                true
            } else {
                rng.random::<f64>() < p
            };
            eng.commit(i, include);
        }
        self.finish(eng.included())
    }

    pub fn sample_seeded(&self, seed: u64) -> Result<SubsetSelection> {
        self.sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Probability that [`VolumeSampler::sample`] draws `s` before padding,
    /// as the product of the marginals along its decision path.
    pub fn path_probability(&self, s: &[usize]) -> Result<f64> {
        let mut eng = self.start()?;
        let mut prob = 1.0;
        for i in 0..self.inst.n() {
            let include = s.contains(&i);
            let p = eng.marginal(i)?;
            prob *= if include { p } else { 1.0 - p };
            if prob == 0.0 {
                return Ok(0.0);
            }
            eng.commit(i, include);
        }
        Ok(prob)
    }

    /// Greedy conditional-expectation walk: at each index keep the branch with
    /// the smaller `E[E_{l'} / E_l]`, excluding on ties.
    pub fn derandomize(&self) -> Result<SubsetSelection> {
        let mut eng = self.start()?;
        for i in 0..self.inst.n() {
            let (a, b) = eng.branches(i);
            let cond = |w: Option<engine::BranchWeights>| w.and_then(|w| w.lo.ratio(&w.hi));
            let include = match (a, b) {
                (None, None) => return Err(DesignError::DegenerateMeasure),
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (Some(_), Some(_)) => match (cond(a), cond(b)) {
                    (Some(xa), Some(xb)) => xa < xb,
                    (Some(_), None) => true,
                    (None, Some(_)) => false,
                    (None, None) => return Err(DesignError::DegenerateMeasure),
                },
            };
            eng.commit(i, include);
        }
        self.finish(eng.included())
    }

    fn finish(&self, sampled: Vec<usize>) -> Result<SubsetSelection> {
        let lambda = self.inst.lambda;
        let sampled_objective =
            gen_ratio_objective(&subset_gram(&self.inst.v, &sampled), lambda, self.params).ok();
        let indices = if sampled.len() < self.inst.k { pad_greedy(self.inst, &sampled)? } else { sampled.clone() };
        let objective = gen_ratio_objective(&subset_gram(&self.inst.v, &indices), lambda, self.params)?;
        Ok(SubsetSelection { padded: indices.len() > sampled.len(), indices, objective, sampled, sampled_objective })
    }
}

/// Completes `s` to size `k`, each time adding the unused index with the
/// largest decrease of `tr((V_S V_S^T + lambda I)^{-1})`; ties go to the smaller index.
///
/// For `lambda = 0` a tiny ridge keeps the inverse defined, which favors
/// vectors that add rank.
pub fn pad_greedy(inst: &DesignInstance, s: &[usize]) -> Result<Vec<usize>> {
    let d = inst.d();
    let full = &inst.v * inst.v.transpose();
    let ridge = inst.lambda.max(1e-12 * spectral_norm_sym(&full)).max(f64::MIN_POSITIVE);
    let mut out: Vec<usize> = s.to_vec();
    while out.len() < inst.k {
        let z = subset_gram(&inst.v, &out) + DMatrix::identity(d, d) * ridge;
        let zinv = z.cholesky().ok_or(DesignError::SingularMatrix)?.inverse();
        let mut best: Option<(usize, f64)> = None;
        for i in 0..inst.n() {
            if out.contains(&i) {
                continue;
            }
            let v = inst.v.column(i);
            let u = &zinv * v;
            let gain = u.norm_squared() / (1.0 + v.dot(&u));
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        out.push(best.expect("k <= n leaves a free index").0);
    }
    out.sort_unstable();
    Ok(out)
}

pub fn sample(m: &HardCoreMeasure, inst: &DesignInstance, params: GenRatioParams, seed: u64) -> Result<SubsetSelection> {
    VolumeSampler::new(inst, m, params)?.sample_seeded(seed)
}

pub fn derandomize(m: &HardCoreMeasure, inst: &DesignInstance, params: GenRatioParams) -> Result<SubsetSelection> {
    VolumeSampler::new(inst, m, params)?.derandomize()
}

/// Plain regularized volume sampling: `z = 1`, `l = d`, `|S| = k`.
pub fn baseline_reg_volume_sample(inst: &DesignInstance, seed: u64) -> Result<SubsetSelection> {
    let m = HardCoreMeasure::uniform(inst.n(), Mode::Exact);
    sample(&m, inst, GenRatioParams::a_optimal(inst.d()), seed)
}

#[cfg(test)]
mod tests;
