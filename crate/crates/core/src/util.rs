//! Small dense linear-algebra and combinatorics helpers shared by the modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Binomial coefficient as a float; zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Exact binomial coefficient; saturates at `u128::MAX`.
pub fn binomial_u128(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i + 1) as u128,
            None => return u128::MAX,
        };
    }
    acc
}

/// Visits every `size`-subset of `0..n` in lexicographic order.
pub fn for_each_subset<F: FnMut(&[usize])>(n: usize, size: usize, mut f: F) {
    if size > n {
        return;
    }
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        f(&idx);
        let mut i = size;
        while i > 0 && idx[i - 1] == n - size + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// All subsets of `0..n` with cardinality in `sizes`, each sorted ascending.
pub fn subsets_with_sizes(n: usize, sizes: impl IntoIterator<Item = usize>) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for s in sizes {
        for_each_subset(n, s, |sub| out.push(sub.to_vec()));
    }
    out
}

/// Symmetric part `(M + M^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    vals
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// `sum_{i in subset} v_i v_i^T` for the columns of `v`.
pub fn subset_gram(v: &DMatrix<f64>, subset: &[usize]) -> DMatrix<f64> {
    let d = v.nrows();
    let mut g = DMatrix::zeros(d, d);
    for &i in subset {
        let col = v.column(i);
        g.ger(1.0, &col, &col, 1.0);
    }
    g
}

/// `V diag(w) V^T = sum_i w_i v_i v_i^T`.
pub fn weighted_gram(v: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let d = v.nrows();
    let mut g = DMatrix::zeros(d, d);
    for (i, &wi) in w.iter().enumerate() {
        if wi != 0.0 {
            let col = v.column(i);
            g.ger(wi, &col, &col, 1.0);
        }
    }
    g
}

/// Columns of `v` indexed by `subset`, as a `d x |subset|` matrix.
pub fn select_columns(v: &DMatrix<f64>, subset: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(v.nrows(), subset.len(), |r, c| v[(r, subset[c])])
}

pub fn is_disjoint(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|i| !b.contains(i))
}

/// Relative difference `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_diff(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
