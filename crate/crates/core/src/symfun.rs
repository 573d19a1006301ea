//! Elementary symmetric polynomials of scalars and of matrix spectra.
//!
//! `E_k(M)` is `e_k` of the eigenvalues of a symmetric PSD matrix. The
//! regularized expansion
//!
//! ```text
//! E_l(M + aI) = sum_{h=0}^{l} C(d-h, l-h) a^{l-h} E_h(M)
//! ```
//!
//! is what lets the sampler and the certification code work with the spectra
//! of `V_S V_S^T` alone.

use nalgebra::DMatrix;

use crate::error::{DesignError, Result};
use crate::util::{binomial, sym_eigenvalues};

/// Relative asymmetry tolerated before `NotSymmetric`.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues below `-PSD_TOL * ||M||_2` are rejected; those above are clamped to 0.
pub const PSD_TOL: f64 = 1e-10;
/// `M + lambda I` counts as singular when its smallest eigenvalue is below this
/// fraction of its largest.
pub const SINGULAR_TOL: f64 = 1e-13;

/// `e_k(values)`; `e_0 = 1` and `e_k = 0` for `k > n`.
pub fn elem_sym_poly(values: &[f64], k: usize) -> f64 {
    if k > values.len() {
        return 0.0;
    }
    esp_prefix(values, k)[k]
}

/// `(e_0, ..., e_n)` of `values`.
pub fn esp_coeffs(values: &[f64]) -> Vec<f64> {
    esp_prefix(values, values.len())
}

fn esp_prefix(values: &[f64], kmax: usize) -> Vec<f64> {
    let mut e = vec![0.0; kmax + 1];
    e[0] = 1.0;
    for (idx, &v) in values.iter().enumerate() {
        let top = kmax.min(idx + 1);
        for j in (1..=top).rev() {
            e[j] += v * e[j - 1];
        }
    }
    e
}

/// Coefficients `E_0(M), ..., E_d(M)` of a PSD matrix, together with its
/// (clamped) spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumPoly {
    pub coeffs: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

impl SpectrumPoly {
    pub fn dim(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn get(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    /// `E_l(M + aI)` through the regularized expansion.
    pub fn regularized(&self, a: f64, l: usize) -> f64 {
        regularization_coeffs(self.dim(), l, a)
            .iter()
            .zip(&self.coeffs)
            .map(|(c, e)| c * e)
            .sum()
    }
}

/// Ordered pair `0 <= l_lo < l_hi <= d` selecting `(E_{l_lo} / E_{l_hi})^{1/(l_hi - l_lo)}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GenRatioParams {
    pub l_lo: usize,
    pub l_hi: usize,
}

impl GenRatioParams {
    pub fn new(l_lo: usize, l_hi: usize, d: usize) -> Result<Self> {
        if l_lo >= l_hi || l_hi > d {
            return Err(DesignError::InvalidParams(format!(
                "need 0 <= l' < l <= d, got l'={l_lo}, l={l_hi}, d={d}"
            )));
        }
        Ok(Self { l_lo, l_hi })
    }

    /// The A-objective pair `(d - 1, d)`.
    pub fn a_optimal(d: usize) -> Self {
        assert!(d >= 1, "dimension must be positive");
        Self { l_lo: d - 1, l_hi: d }
    }

    pub fn exponent(&self) -> f64 {
        1.0 / (self.l_hi - self.l_lo) as f64
    }

    pub fn is_a_optimal(&self, d: usize) -> bool {
        self.l_hi == d && self.l_lo + 1 == d
    }
}

/// PSD-validated spectrum of the symmetric part of `m`.
pub fn psd_spectrum(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(DesignError::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let maxabs = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut asym = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * maxabs {
        return Err(DesignError::NotSymmetric { asymmetry: asym });
    }
    let mut eig = sym_eigenvalues(m);
    let norm = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for v in eig.iter_mut() {
        if *v < 0.0 {
            if *v < -PSD_TOL * norm {
                return Err(DesignError::NotPsd { min_eigenvalue: *v });
            }
            *v = 0.0;
        }
    }
    Ok(eig)
}

/// `E_k(M)` for `k = 0..=d`.
pub fn matrix_esp(m: &DMatrix<f64>) -> Result<SpectrumPoly> {
    let eigenvalues = psd_spectrum(m)?;
    let coeffs = esp_coeffs(&eigenvalues);
    Ok(SpectrumPoly { coeffs, eigenvalues })
}

/// `C(d-h, l-h) a^{l-h}` for `h = 0..=l`, with `0^0 = 1`.
pub fn regularization_coeffs(d: usize, l: usize, a: f64) -> Vec<f64> {
    (0..=l)
        .map(|h| binomial(d - h, l - h) * a.powi((l - h) as i32))
        .collect()
}

/// `E_l(M + aI)` expanded in the `E_h(M)`.
pub fn regularized_esp(m: &DMatrix<f64>, a: f64, l: usize) -> Result<f64> {
    let d = m.nrows();
    if l > d {
        return Err(DesignError::InvalidParams(format!("l = {l} exceeds d = {d}")));
    }
    Ok(matrix_esp(m)?.regularized(a, l))
}

/// Both routes to the regularized A-objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoptValue {
    /// `tr((M + lambda I)^{-1})` from a Cholesky inverse.
    pub trace_inverse: f64,
    /// `E_{d-1}(M + lambda I) / E_d(M + lambda I)` from the shifted spectrum.
    pub esp_ratio: f64,
    /// Relative discrepancy between the two.
    pub discrepancy: f64,
}

fn shifted_spectrum(m: &DMatrix<f64>, lambda: f64) -> Result<Vec<f64>> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(DesignError::InvalidParams(format!("lambda must be >= 0, got {lambda}")));
    }
    let shifted: Vec<f64> = psd_spectrum(m)?.into_iter().map(|g| g + lambda).collect();
    let max = shifted.iter().fold(0.0f64, |a, v| a.max(*v));
    let min = shifted.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    if shifted.is_empty() || max <= 0.0 || min <= SINGULAR_TOL * max {
        return Err(DesignError::SingularMatrix);
    }
    Ok(shifted)
}

/// Evaluates `tr((M + lambda I)^{-1})` two ways and reports their agreement.
pub fn aopt_evaluate(m: &DMatrix<f64>, lambda: f64) -> Result<AoptValue> {
    let shifted = shifted_spectrum(m, lambda)?;
    let d = shifted.len();
    let e = esp_coeffs(&shifted);
    let esp_ratio = e[d - 1] / e[d];

    let z = crate::util::symmetrize(m) + DMatrix::identity(d, d) * lambda;
    let trace_inverse = match z.cholesky() {
        Some(ch) => ch.inverse().trace(),
        None => shifted.iter().map(|g| 1.0 / g).sum(),
    };
    let discrepancy = crate::util::rel_diff(trace_inverse, esp_ratio, f64::MIN_POSITIVE);
    Ok(AoptValue { trace_inverse, esp_ratio, discrepancy })
}

/// `tr((M + lambda I)^{-1})`.
pub fn aopt_objective(m: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    aopt_evaluate(m, lambda).map(|v| v.trace_inverse)
}

/// `(E_{l'}(M + lambda I) / E_l(M + lambda I))^{1/(l - l')}`.
pub fn gen_ratio_objective(m: &DMatrix<f64>, lambda: f64, p: GenRatioParams) -> Result<f64> {
    let d = m.nrows();
    if p.l_hi > d || p.l_lo >= p.l_hi {
        return Err(DesignError::InvalidParams(format!(
            "ratio pair ({}, {}) invalid for d = {d}",
            p.l_lo, p.l_hi
        )));
    }
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(DesignError::InvalidParams(format!("lambda must be >= 0, got {lambda}")));
    }
    let shifted: Vec<f64> = psd_spectrum(m)?.into_iter().map(|g| g + lambda).collect();
    let e = esp_coeffs(&shifted);
    let scale = shifted.iter().fold(0.0f64, |a, v| a.max(*v));
    let floor = 1e-12 * binomial(d, p.l_hi) * scale.powi(p.l_hi as i32);
    if !(e[p.l_hi] > floor) {
        return Err(DesignError::DegenerateSpectrum { l: p.l_hi, value: e[p.l_hi] });
    }
    Ok((e[p.l_lo] / e[p.l_hi]).powf(p.exponent()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(v))
    }

    #[test]
    fn esp_conventions() {
        assert_eq!(elem_sym_poly(&[5.0, 7.0, 9.0], 0), 1.0);
        assert_eq!(elem_sym_poly(&[3.0, 4.0], 5), 0.0);
        assert_eq!(elem_sym_poly(&[1.0, 1.0, 1.0, 1.0], 2), 6.0);
        assert_eq!(elem_sym_poly(&[], 0), 1.0);
        assert_eq!(esp_coeffs(&[1.0, 2.0, 3.0]), vec![1.0, 6.0, 11.0, 6.0]);
    }

    #[test]
    fn esp_recurrence_on_integers() {
        let xs = [3.0, -2.0, 5.0, 7.0, 1.0, 4.0];
        for k in 0..=xs.len() {
            let (head, last) = xs.split_at(xs.len() - 1);
            let lhs = elem_sym_poly(&xs, k);
            let rhs = elem_sym_poly(head, k)
                + if k > 0 { last[0] * elem_sym_poly(head, k - 1) } else { 0.0 };
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn matrix_esp_identity_and_zero() {
        let p = matrix_esp(&DMatrix::identity(3, 3)).unwrap();
        for (a, b) in p.coeffs.iter().zip([1.0, 3.0, 3.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let z = matrix_esp(&DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(z.coeffs, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn matrix_esp_rejects_asymmetric_and_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(matrix_esp(&m), Err(DesignError::NotSymmetric { .. })));
        let m = diag(&[1.0, -0.5]);
        assert!(matches!(matrix_esp(&m), Err(DesignError::NotPsd { .. })));
        // roundoff-sized negative eigenvalue is clamped
        let m = diag(&[1.0, -1e-13]);
        let p = matrix_esp(&m).unwrap();
        assert_eq!(p.eigenvalues[0], 0.0);
    }

    #[test]
    fn regularized_examples() {
        let v = regularized_esp(&DMatrix::zeros(3, 3), 2.0, 2).unwrap();
        assert!((v - 12.0).abs() < 1e-12);
        let v = regularized_esp(&diag(&[1.0, 2.0]), 1.0, 1).unwrap();
        assert!((v - 5.0).abs() < 1e-12);
        // l = d: all coefficients 1
        assert_eq!(regularization_coeffs(3, 3, 2.0), vec![8.0, 4.0, 2.0, 1.0]);
        assert_eq!(regularization_coeffs(2, 2, 0.0), vec![0.0, 0.0, 1.0]);
        assert!(regularized_esp(&diag(&[1.0]), 1.0, 2).is_err());
    }

    #[test]
    fn aopt_examples() {
        assert!((aopt_objective(&DMatrix::identity(4, 4), 0.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((aopt_objective(&DMatrix::zeros(3, 3), 1.0).unwrap() - 3.0).abs() < 1e-12);
        let v = aopt_evaluate(&diag(&[1.0, 3.0]), 1.0).unwrap();
        assert!((v.trace_inverse - 0.75).abs() < 1e-14);
        assert!(v.discrepancy < 1e-12);
        assert_eq!(
            aopt_objective(&diag(&[1.0, 0.0]), 0.0),
            Err(DesignError::SingularMatrix)
        );
    }

    #[test]
    fn gen_ratio_examples() {
        let m = diag(&[2.0, 5.0, 0.5]);
        let a = aopt_objective(&m, 0.3).unwrap();
        let g = gen_ratio_objective(&m, 0.3, GenRatioParams::a_optimal(3)).unwrap();
        assert!((a - g).abs() < 1e-12 * a);

        let id = DMatrix::identity(4, 4);
        let p = GenRatioParams::new(1, 3, 4).unwrap();
        let expect = (binomial(4, 1) / binomial(4, 3)).powf(0.5);
        assert!((gen_ratio_objective(&id, 0.0, p).unwrap() - expect).abs() < 1e-12);

        let p = GenRatioParams::new(0, 3, 3).unwrap();
        let v = gen_ratio_objective(&diag(&[1.0, 2.0, 4.0]), 0.0, p).unwrap();
        assert!((v - 0.5).abs() < 1e-12);

        let p = GenRatioParams::new(0, 2, 2).unwrap();
        assert!(matches!(
            gen_ratio_objective(&diag(&[1.0, 0.0]), 0.0, p),
            Err(DesignError::DegenerateSpectrum { .. })
        ));
        assert!(GenRatioParams::new(2, 2, 3).is_err());
    }
}
