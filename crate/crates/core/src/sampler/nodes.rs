//! Evaluation of the generating polynomial
//!
//! ```text
//! P(t, s) = sum_{I ⊆ S ⊆ [n] \ J} t^{|S|} z^S det(I_d + s V_S V_S^T)
//!         = prod_{i in I} t z_i * prod_{i in A} (1 + t z_i) * det(I_d + s W(t)),
//! W(t)    = sum_{i in I} v_i v_i^T + sum_{i in A} q_i(t) v_i v_i^T,  q_i(t) = t z_i / (1 + t z_i),
//! ```
//!
//! on circles of nodes `t_j = r e^{i phi_j}`, `s_q = rho e^{i psi_q}`, and the
//! discrete Fourier transforms that turn node values into coefficients.
//! Node angles carry a quarter-step offset so no `t_j` lies on the negative real
//! axis, where `1 + t z_i` can vanish.

use nalgebra::{Complex, DMatrix};

pub(crate) type C64 = Complex<f64>;

const NODE_OFFSET: f64 = 0.25;

/// `e^{i 2 pi (j + offset) m / n}` with the phase reduced modulo `n` before
/// converting to an angle.
pub(crate) fn node_power(j: usize, m: usize, n: usize) -> C64 {
    let whole = ((j as u128 * m as u128) % n as u128) as f64;
    let frac = (m as f64 * NODE_OFFSET) % n as f64;
    let a = 2.0 * std::f64::consts::PI * ((whole + frac) / n as f64);
    C64::new(a.cos(), a.sin())
}

pub(crate) fn node(j: usize, n: usize) -> C64 {
    node_power(j, 1, n)
}

/// Determinant by Gaussian elimination with partial pivoting; destroys `a`.
pub(crate) fn det_in_place(a: &mut [C64], d: usize) -> C64 {
    let mut det = C64::new(1.0, 0.0);
    for col in 0..d {
        let mut piv = col;
        let mut best = a[col * d + col].norm();
        for row in col + 1..d {
            let v = a[row * d + col].norm();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best == 0.0 {
            return C64::new(0.0, 0.0);
        }
        if piv != col {
            for c in 0..d {
                a.swap(col * d + c, piv * d + c);
            }
            det = -det;
        }
        let p = a[col * d + col];
        det *= p;
        for row in col + 1..d {
            let f = a[row * d + col] / p;
            if f != C64::new(0.0, 0.0) {
                for c in col + 1..d {
                    let sub = f * a[col * d + c];
                    a[row * d + c] -= sub;
                }
            }
        }
    }
    det
}

/// `det(I + s M)` for a row-major `d x d` matrix `m`.
pub(crate) fn det_identity_plus(m: &[C64], s: C64, d: usize, buf: &mut Vec<C64>) -> C64 {
    buf.clear();
    buf.extend(m.iter().map(|&x| x * s));
    for i in 0..d {
        buf[i * d + i] += 1.0;
    }
    det_in_place(buf, d)
}

/// Adds `w v v^T` to a row-major complex matrix.
pub(crate) fn add_outer(m: &mut [C64], v: &[f64], w: C64) {
    let d = v.len();
    for a in 0..d {
        let wa = w * v[a];
        for b in 0..d {
            m[a * d + b] += wa * v[b];
        }
    }
}

/// Solves `base + sum_i r z_i / (1 + r z_i) = target` for `r > 0`, with the
/// target clamped to the open interval the left side can reach.
pub(crate) fn saddle_radius(z_free: &[f64], base: usize, target: f64) -> f64 {
    let pos: Vec<f64> = z_free.iter().copied().filter(|&z| z > 0.0).collect();
    if pos.is_empty() {
        return 1.0;
    }
    let lo_t = base as f64 + 0.5f64.min(pos.len() as f64 * 0.5);
    let hi_t = (base + pos.len()) as f64 - 0.5f64.min(pos.len() as f64 * 0.5);
    let target = target.clamp(lo_t.min(hi_t), hi_t.max(lo_t));
    let need = target - base as f64;
    let count = |ln_r: f64| -> f64 {
        let r = ln_r.exp();
        pos.iter().map(|&z| r * z / (1.0 + r * z)).sum()
    };
    let zmax = pos.iter().fold(0.0f64, |a, &b| a.max(b));
    let zmin = pos.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let mut lo = -(zmax.ln()) - 60.0;
    let mut hi = -(zmin.ln()) + 60.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count(mid) < need {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// `d / tr(W(r))`, the s-radius that balances the degrees of `det(I + s W)`.
pub(crate) fn balanced_s_radius(v: &DMatrix<f64>, z: &[f64], anchors: &[usize], free: &[usize], r: f64) -> f64 {
    let d = v.nrows();
    let mut tr = 0.0;
    for &i in anchors {
        tr += v.column(i).norm_squared();
    }
    for &i in free {
        let rz = r * z[i];
        tr += rz / (1.0 + rz) * v.column(i).norm_squared();
    }
    if tr > 0.0 && tr.is_finite() {
        d as f64 / tr
    } else {
        1.0
    }
}

/// Per-node log prefactor and `W(t_j)` (row-major) for the given anchors.
pub(crate) fn node_state(
    v: &DMatrix<f64>,
    z: &[f64],
    anchors: &[usize],
    free: &[usize],
    t: C64,
) -> (C64, Vec<C64>) {
    let d = v.nrows();
    let mut log = C64::new(0.0, 0.0);
    let mut m = vec![C64::new(0.0, 0.0); d * d];
    let one = C64::new(1.0, 0.0);
    for &i in anchors {
        log += (t * z[i]).ln();
        add_outer(&mut m, v.column(i).as_slice(), one);
    }
    for &i in free {
        if z[i] > 0.0 {
            let tz = t * z[i];
            log += (one + tz).ln();
            add_outer(&mut m, v.column(i).as_slice(), tz / (one + tz));
        }
    }
    (log, m)
}

/// `(1/n) sum_{m=lo}^{hi} t_j^{-m}` for `t_j = r * node(j, n)`, returned as
/// `(ln factor, weights)` with the common magnitude factored out.
pub(crate) fn row_functional(r: f64, n: usize, lo: usize, hi: usize) -> (f64, Vec<C64>) {
    let len = hi - lo + 1;
    let one = C64::new(1.0, 0.0);
    let mut out = Vec::with_capacity(n);
    let (log, anchor) = if r <= 1.0 { (-(hi as f64) * r.ln(), hi) } else { (-(lo as f64) * r.ln(), lo) };
    for j in 0..n {
        let u = node(j, n);
        let lead = node_power(j, anchor, n).conj();
        // ratio of consecutive terms walking away from the anchor
        let q = if r <= 1.0 { u * r } else { u.conj() / r };
        let geom = if len == 1 {
            one
        } else if (one - q).norm() < 1e-3 {
            let mut acc = C64::new(0.0, 0.0);
            let mut p = one;
            for _ in 0..len {
                acc += p;
                p *= q;
            }
            acc
        } else {
            (one - q.powu(len as u32)) / (one - q)
        };
        out.push(lead * geom / n as f64);
    }
    (log, out)
}

/// `(1/n) sum_h coef_h s_q^{-h}` for `s_q = rho * node(q, n)`.
pub(crate) fn degree_functional(rho: f64, n: usize, coefs: &[f64]) -> Vec<C64> {
    (0..n)
        .map(|q| {
            let mut acc = C64::new(0.0, 0.0);
            for (h, &c) in coefs.iter().enumerate() {
                if c != 0.0 {
                    acc += node_power(q, h, n).conj() * (c * rho.powi(-(h as i32)));
                }
            }
            acc / n as f64
        })
        .collect()
}
