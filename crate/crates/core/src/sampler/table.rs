//! Anchored sums `sum_{|S| = k0, I ⊆ S, J ∩ S = ∅} z^S E_{d0}(V_S^T V_S)` for all
//! `k0 <= k`, `d0 <= l`, read off the generating polynomial by a two-variable
//! discrete Fourier transform.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::nodes::{balanced_s_radius, det_identity_plus, node, node_power, node_state, saddle_radius, C64};
use crate::error::{DesignError, Result};

/// A non-negative quantity stored as `mantissa * exp(log)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogScaled {
    pub mantissa: f64,
    pub log: f64,
}

impl LogScaled {
    pub const ZERO: LogScaled = LogScaled { mantissa: 0.0, log: 0.0 };

    pub fn value(&self) -> f64 {
        if self.mantissa == 0.0 {
            0.0
        } else {
            self.mantissa * self.log.exp()
        }
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa == 0.0
    }

    /// `self / other`, or `None` when `other` is zero.
    pub fn ratio(&self, other: &LogScaled) -> Option<f64> {
        if other.mantissa == 0.0 {
            return None;
        }
        if self.mantissa == 0.0 {
            return Some(0.0);
        }
        Some(self.mantissa / other.mantissa * (self.log - other.log).exp())
    }

    pub fn add(&self, other: &LogScaled) -> LogScaled {
        if self.mantissa == 0.0 {
            return *other;
        }
        if other.mantissa == 0.0 {
            return *self;
        }
        let log = self.log.max(other.log);
        LogScaled {
            mantissa: self.mantissa * (self.log - log).exp() + other.mantissa * (other.log - log).exp(),
            log,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EspSumTable {
    pub k: usize,
    pub l: usize,
    pub anchors_in: Vec<usize>,
    pub anchors_out: Vec<usize>,
    log_scale: f64,
    /// `(k + 1) x (l + 1)`, entries relative to `exp(log_scale)`.
    mantissa: Vec<Vec<f64>>,
}

impl EspSumTable {
    /// Raw entry; may overflow to infinity for very large sums.
    pub fn entry(&self, k0: usize, d0: usize) -> f64 {
        self.scaled(k0, d0).value()
    }

    pub fn scaled(&self, k0: usize, d0: usize) -> LogScaled {
        match self.mantissa.get(k0).and_then(|r| r.get(d0)) {
            Some(&m) => LogScaled { mantissa: m, log: self.log_scale },
            None => LogScaled::ZERO,
        }
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// `sum_{k0 in rows} sum_{d0} coefs[d0] * table[k0][d0]`.
    pub fn contract(&self, rows: std::ops::RangeInclusive<usize>, coefs: &[f64]) -> LogScaled {
        let mut acc = 0.0;
        for k0 in rows {
            if let Some(row) = self.mantissa.get(k0) {
                for (c, m) in coefs.iter().zip(row) {
                    acc += c * m;
                }
            }
        }
        LogScaled { mantissa: acc.max(0.0), log: self.log_scale }
    }
}

pub(crate) fn validate_anchors(n: usize, anchors_in: &[usize], anchors_out: &[usize]) -> Result<()> {
    let mut seen = vec![0u8; n];
    for (set, tag) in [(anchors_in, 1u8), (anchors_out, 2u8)] {
        for &i in set {
            if i >= n {
                return Err(DesignError::InvalidAnchors(format!("index {i} out of range for n = {n}")));
            }
            if seen[i] != 0 {
                return Err(DesignError::InvalidAnchors(format!("index {i} repeated or in both I and J")));
            }
            seen[i] = tag;
        }
    }
    Ok(())
}

fn free_indices(n: usize, anchors_in: &[usize], anchors_out: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| !anchors_in.contains(i) && !anchors_out.contains(i)).collect()
}

/// Builds the table of anchored weighted spectral sums.
pub fn esp_sum_table(
    z: &[f64],
    v: &DMatrix<f64>,
    anchors_in: &[usize],
    anchors_out: &[usize],
    k: usize,
    l: usize,
) -> Result<EspSumTable> {
    let (d, n) = v.shape();
    if z.len() != n {
        return Err(DesignError::DimensionMismatch(format!("z has length {}, V has {n} columns", z.len())));
    }
    if z.iter().any(|&zi| !(zi >= 0.0) || !zi.is_finite()) {
        return Err(DesignError::InvalidParams("hard-core weights must be finite and non-negative".into()));
    }
    if l > d {
        return Err(DesignError::InvalidParams(format!("l = {l} exceeds d = {d}")));
    }
    validate_anchors(n, anchors_in, anchors_out)?;
    if anchors_in.len() > k {
        return Err(DesignError::InvalidAnchors(format!("|I| = {} exceeds k = {k}", anchors_in.len())));
    }

    let mut table = EspSumTable {
        k,
        l,
        anchors_in: anchors_in.to_vec(),
        anchors_out: anchors_out.to_vec(),
        log_scale: 0.0,
        mantissa: vec![vec![0.0; l + 1]; k + 1],
    };
    if anchors_in.iter().any(|&i| z[i] == 0.0) {
        return Ok(table);
    }

    let free: Vec<usize> = free_indices(n, anchors_in, anchors_out).into_iter().filter(|&i| z[i] > 0.0).collect();
    let base = anchors_in.len();
    let degree = base + free.len();
    let z_free: Vec<f64> = free.iter().map(|&i| z[i]).collect();

    // Rows grouped by a quantized radius near each row's saddle point.
    let mut buckets: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for k0 in base..=k.min(degree) {
        let r = saddle_radius(&z_free, base, k0 as f64);
        let key = (2.0 * r.ln()).round() as i64;
        buckets.entry(key).or_default().push(k0);
    }

    let n_t = degree + 1;
    let n_s = d + 1;
    let mut logs = vec![vec![f64::NEG_INFINITY; l + 1]; k + 1];
    let mut signs = vec![vec![0.0f64; l + 1]; k + 1];
    let mut buf = Vec::with_capacity(d * d);
    for (key, rows) in buckets {
        let r = (key as f64 / 2.0).exp();
        let rho = balanced_s_radius(v, z, anchors_in, &free, r);
        let s_nodes: Vec<C64> = (0..n_s).map(|q| node(q, n_s) * rho).collect();
        let mut node_logs = Vec::with_capacity(n_t);
        let mut dets = Vec::with_capacity(n_t);
        for j in 0..n_t {
            let t = node(j, n_t) * r;
            let (log, m) = node_state(v, z, anchors_in, &free, t);
            node_logs.push(log);
            dets.push(s_nodes.iter().map(|&s| det_identity_plus(&m, s, d, &mut buf)).collect::<Vec<_>>());
        }
        let g = node_logs.iter().fold(f64::NEG_INFINITY, |a, c| a.max(c.re));
        let scaled: Vec<C64> = node_logs.iter().map(|c| (c - g).exp()).collect();
        for &k0 in &rows {
            for d0 in 0..=l.min(k0) {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..n_t {
                    let mut inner = C64::new(0.0, 0.0);
                    for q in 0..n_s {
                        inner += dets[j][q] * node_power(q, d0, n_s).conj();
                    }
                    acc += scaled[j] * inner * node_power(j, k0, n_t).conj();
                }
                let c = acc.re / (n_t * n_s) as f64;
                if c > 0.0 {
                    logs[k0][d0] = c.ln() + g - k0 as f64 * r.ln() - d0 as f64 * rho.ln();
                    signs[k0][d0] = 1.0;
                }
            }
        }
    }

    let top = logs.iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if top.is_finite() {
        table.log_scale = top;
        for k0 in 0..=k {
            for d0 in 0..=l {
                table.mantissa[k0][d0] = signs[k0][d0] * (logs[k0][d0] - top).exp();
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symfun::{elem_sym_poly, matrix_esp};
    use crate::util::{for_each_subset, subset_gram};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn enumerate(z: &[f64], v: &DMatrix<f64>, i_set: &[usize], j_set: &[usize], k0: usize, d0: usize) -> f64 {
        let n = z.len();
        let mut total = 0.0;
        for_each_subset(n, k0, |s| {
            if i_set.iter().all(|i| s.contains(i)) && j_set.iter().all(|j| !s.contains(j)) {
                let zs: f64 = s.iter().map(|&i| z[i]).product();
                total += zs * matrix_esp(&subset_gram(v, s)).unwrap().get(d0);
            }
        });
        total
    }

    #[test]
    fn zero_degree_row_is_esp_of_weights() {
        let z = [0.5, 1.5, 2.0, 0.25, 3.0];
        let v = DMatrix::from_fn(2, 5, |r, c| (r + 2 * c) as f64 * 0.3 - 0.7);
        let t = esp_sum_table(&z, &v, &[], &[], 4, 2).unwrap();
        for k0 in 0..=4 {
            let e = elem_sym_poly(&z, k0);
            assert!((t.entry(k0, 0) - e).abs() <= 1e-10 * e, "k0={k0}");
        }
    }

    #[test]
    fn small_hand_example() {
        let v = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let t = esp_sum_table(&[1.0; 3], &v, &[], &[], 2, 1).unwrap();
        assert!((t.entry(2, 1) - 28.0).abs() < 1e-10);
        assert!((t.entry(2, 0) - 3.0).abs() < 1e-12);
        assert_eq!(t.entry(0, 1), 0.0);
    }

    #[test]
    fn anchored_base_case_and_errors() {
        let z = [0.5, 2.0, 1.5, 0.8];
        let v = DMatrix::from_fn(2, 4, |r, c| 1.0 + (r * 4 + c) as f64 * 0.17);
        let t = esp_sum_table(&z, &v, &[1, 3], &[0], 3, 2).unwrap();
        assert!((t.entry(2, 0) - 2.0 * 0.8).abs() < 1e-12);
        assert_eq!(t.entry(1, 0), 0.0);
        assert!(matches!(esp_sum_table(&z, &v, &[1], &[1], 3, 2), Err(DesignError::InvalidAnchors(_))));
        assert!(matches!(esp_sum_table(&z, &v, &[0, 1, 2], &[], 2, 2), Err(DesignError::InvalidAnchors(_))));
    }

    #[test]
    fn matches_enumeration_with_anchors() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let n = 9;
            let d = 3;
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
            let v = DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0));
            let t = esp_sum_table(&z, &v, &[2], &[5, 7], 6, 3).unwrap();
            // entries that vanish exactly come out of enumeration as round-off
            let floor = 1e-13 * t.log_scale().exp();
            for k0 in 0..=6 {
                for d0 in 0..=3 {
                    let want = enumerate(&z, &v, &[2], &[5, 7], k0, d0);
                    let got = t.entry(k0, d0);
                    assert!((got - want).abs() <= 1e-8 * want.abs() + floor, "k0={k0} d0={d0}: {got} vs {want}");
                }
            }
        }
    }
}
