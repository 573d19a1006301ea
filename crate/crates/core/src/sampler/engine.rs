//! Sequential inclusion/exclusion decisions with node state updated in place.
//!
//! The engine keeps, for every t-node, the log prefactor and `W(t_j)` of the
//! generating polynomial for the current anchors `(I, J)`. Moving an index from
//! the free set into `I` or `J` is a rank-one update per node, so each decision
//! costs `O(n_t * n_s * d^3)` instead of a full rebuild.

use nalgebra::DMatrix;

use super::nodes::{
    add_outer, balanced_s_radius, degree_functional, det_identity_plus, node, node_state, row_functional,
    saddle_radius, C64,
};
use super::table::LogScaled;
use super::Mode;
use crate::error::{DesignError, Result};

/// Rebuild when the estimated relative error of a branch weight exceeds this.
const MAX_CONDITION: f64 = 1e6;
/// Rebuild when the subtracted rank-one mass dwarfs what is left.
const MAX_CANCELLATION: f64 = 100.0;
const ZERO_FLOOR: f64 = 1e-13;
/// Clamping a probability by more than this is reported, not absorbed.
pub(crate) const CLAMP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Free,
    In,
    Out,
}

/// Weight of one branch under the `l` and `l'` spectral functionals.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BranchWeights {
    pub hi: LogScaled,
    pub lo: LogScaled,
    /// Sum of absolute node contributions, the scale of the round-off in `hi`.
    pub abs: LogScaled,
}

impl BranchWeights {
    const FORCED: BranchWeights = BranchWeights { hi: LogScaled::ZERO, lo: LogScaled::ZERO, abs: LogScaled::ZERO };
}

struct Grid {
    n_t: usize,
    n_s: usize,
    t: Vec<C64>,
    s: Vec<C64>,
    row_log: f64,
    row_w: Vec<C64>,
    row_lo_log: f64,
    row_lo_w: Vec<C64>,
    phi_hi: Vec<C64>,
    phi_lo: Vec<C64>,
    log_sum: Vec<C64>,
    w: Vec<Vec<C64>>,
    removed_mass: f64,
    kept_mass: f64,
    radius: f64,
}

pub(crate) struct Engine<'a> {
    v: &'a DMatrix<f64>,
    z: &'a [f64],
    d: usize,
    k: usize,
    mode: Mode,
    coef_hi: Vec<f64>,
    coef_lo: Vec<f64>,
    min_row_lo: usize,
    status: Vec<Status>,
    n_in: usize,
    n_pos: usize,
    grid: Option<Grid>,
    buf: Vec<C64>,
    pub(crate) rebuilds: usize,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(
        v: &'a DMatrix<f64>,
        z: &'a [f64],
        k: usize,
        mode: Mode,
        coef_hi: Vec<f64>,
        coef_lo: Vec<f64>,
        min_row_lo: usize,
    ) -> Self {
        let n = v.ncols();
        Self {
            v,
            z,
            d: v.nrows(),
            k,
            mode,
            coef_hi,
            coef_lo,
            min_row_lo,
            status: vec![Status::Free; n],
            n_in: 0,
            n_pos: z.iter().filter(|&&x| x > 0.0).count(),
            grid: None,
            buf: Vec::new(),
            rebuilds: 0,
        }
    }

    fn anchors(&self) -> (Vec<usize>, Vec<usize>) {
        let mut inside = Vec::new();
        let mut free = Vec::new();
        for (i, st) in self.status.iter().enumerate() {
            match st {
                Status::In => inside.push(i),
                Status::Free if self.z[i] > 0.0 => free.push(i),
                _ => {}
            }
        }
        (inside, free)
    }

    fn rows(&self) -> (usize, usize) {
        match self.mode {
            Mode::Exact => (self.k, self.k),
            Mode::AtMost => (0, self.k),
        }
    }

    fn build(&mut self) {
        let (inside, free) = self.anchors();
        let z_free: Vec<f64> = free.iter().map(|&i| self.z[i]).collect();
        let base = inside.len();
        let r = match self.mode {
            Mode::Exact => saddle_radius(&z_free, base, self.k as f64),
            Mode::AtMost => {
                if base + free.len() <= self.k {
                    1.0
                } else {
                    saddle_radius(&z_free, base, self.k as f64).min(1.0)
                }
            }
        };
        let rho = balanced_s_radius(self.v, self.z, &inside, &free, r);
        let n_t = self.n_pos + 1;
        let n_s = self.d + 1;
        let (lo, hi) = self.rows();
        let hi = hi.min(n_t - 1);
        let lo = lo.min(hi);
        let (row_log, row_w) = row_functional(r, n_t, lo, hi);
        let lo_start = lo.max(self.min_row_lo);
        let (row_lo_log, row_lo_w) = if lo_start <= hi {
            row_functional(r, n_t, lo_start, hi)
        } else {
            (0.0, vec![C64::new(0.0, 0.0); n_t])
        };
        let t: Vec<C64> = (0..n_t).map(|j| node(j, n_t) * r).collect();
        let s: Vec<C64> = (0..n_s).map(|q| node(q, n_s) * rho).collect();
        let mut log_sum = Vec::with_capacity(n_t);
        let mut w = Vec::with_capacity(n_t);
        for &tj in &t {
            let (lg, m) = node_state(self.v, self.z, &inside, &free, tj);
            log_sum.push(lg);
            w.push(m);
        }
        let kept_mass = inside.iter().map(|&i| self.v.column(i).norm_squared()).sum::<f64>()
            + free
                .iter()
                .map(|&i| {
                    let rz = r * self.z[i];
                    rz / (1.0 + rz) * self.v.column(i).norm_squared()
                })
                .sum::<f64>();
        self.grid = Some(Grid {
            n_t,
            n_s,
            t,
            s,
            row_log,
            row_w,
            row_lo_log,
            row_lo_w,
            phi_hi: degree_functional(rho, n_s, &self.coef_hi),
            phi_lo: degree_functional(rho, n_s, &self.coef_lo),
            log_sum,
            w,
            removed_mass: 0.0,
            kept_mass,
            radius: r,
        });
        self.rebuilds += 1;
    }

    fn ensure_grid(&mut self) {
        let stale = match &self.grid {
            None => true,
            Some(g) => g.removed_mass > MAX_CANCELLATION * g.kept_mass.max(f64::MIN_POSITIVE),
        };
        if stale {
            self.build();
        }
    }

    /// Weights of the current state, or of the state after moving free index
    /// `i` into `I` (`Some((i, true))`) or `J` (`Some((i, false))`).
    fn branch(&mut self, step: Option<(usize, bool)>) -> BranchWeights {
        let grid = self.grid.as_ref().expect("grid built");
        let one = C64::new(1.0, 0.0);
        let i = step.map_or(0, |(i, _)| i);
        let vi = self.v.column(i);
        let vi = vi.as_slice();
        let zi = if step.is_some() { self.z[i] } else { 0.0 };
        let d = self.d;
        let mut logs = Vec::with_capacity(grid.n_t);
        let mut vals_hi = Vec::with_capacity(grid.n_t);
        let mut vals_lo = Vec::with_capacity(grid.n_t);
        let mut abs_hi = Vec::with_capacity(grid.n_t);
        let mut abs_lo = Vec::with_capacity(grid.n_t);
        let mut m = vec![C64::new(0.0, 0.0); d * d];
        for j in 0..grid.n_t {
            let tz = grid.t[j] * zi;
            let (mut lg, q) = if zi > 0.0 {
                (grid.log_sum[j] - (one + tz).ln(), tz / (one + tz))
            } else {
                (grid.log_sum[j], C64::new(0.0, 0.0))
            };
            m.copy_from_slice(&grid.w[j]);
            match step {
                Some((_, true)) => {
                    lg += tz.ln();
                    add_outer(&mut m, vi, one - q);
                }
                Some((_, false)) => add_outer(&mut m, vi, -q),
                None => {}
            }
            let mut hi = C64::new(0.0, 0.0);
            let mut lo = C64::new(0.0, 0.0);
            let mut ab = 0.0;
            let mut ab_lo = 0.0;
            for qn in 0..grid.n_s {
                let det = det_identity_plus(&m, grid.s[qn], d, &mut self.buf);
                hi += grid.phi_hi[qn] * det;
                lo += grid.phi_lo[qn] * det;
                ab += grid.phi_hi[qn].norm() * det.norm();
                ab_lo += grid.phi_lo[qn].norm() * det.norm();
            }
            logs.push(lg);
            vals_hi.push(hi * grid.row_w[j]);
            vals_lo.push(lo * grid.row_lo_w[j]);
            abs_hi.push(ab * grid.row_w[j].norm());
            abs_lo.push(ab_lo * grid.row_lo_w[j].norm());
        }
        let g = logs.iter().fold(f64::NEG_INFINITY, |a, c| a.max(c.re));
        let mut hi = C64::new(0.0, 0.0);
        let mut lo = C64::new(0.0, 0.0);
        let mut ab = 0.0;
        let mut ab_lo = 0.0;
        for j in 0..grid.n_t {
            let e = (logs[j] - g).exp();
            hi += vals_hi[j] * e;
            lo += vals_lo[j] * e;
            ab += abs_hi[j] * e.norm();
            ab_lo += abs_lo[j] * e.norm();
        }
        let log = g + grid.row_log;
        let log_lo = g + grid.row_lo_log;
        // Values at round-off level of the node sum are zero weights.
        let clean = |x: f64, abs: f64| if x > ZERO_FLOOR * abs { x } else { 0.0 };
        BranchWeights {
            hi: LogScaled { mantissa: clean(hi.re, ab), log },
            lo: LogScaled { mantissa: clean(lo.re, ab_lo), log: log_lo },
            abs: LogScaled { mantissa: ab, log },
        }
    }

    /// Whether the include / exclude branches of `i` can carry weight at all.
    fn feasible(&self, i: usize) -> (bool, bool) {
        let pos_free_other = self
            .status
            .iter()
            .enumerate()
            .filter(|&(j, st)| j != i && *st == Status::Free && self.z[j] > 0.0)
            .count();
        let can_in = self.z[i] > 0.0 && self.n_in < self.k;
        let can_out = match self.mode {
            Mode::Exact => self.n_in + pos_free_other >= self.k,
            Mode::AtMost => true,
        };
        (can_in, can_out)
    }

    /// Weights of both branches, rebuilding the grid if either is poorly resolved.
    pub(crate) fn branches(&mut self, i: usize) -> (Option<BranchWeights>, Option<BranchWeights>) {
        assert_eq!(self.status[i], Status::Free, "index {i} already decided");
        let (can_in, can_out) = self.feasible(i);
        if !(can_in && can_out) {
            // One side is forced; its weight is never compared against anything.
            return (can_in.then_some(BranchWeights::FORCED), can_out.then_some(BranchWeights::FORCED));
        }
        self.ensure_grid();
        let mut a = self.branch(Some((i, true)));
        let mut b = self.branch(Some((i, false)));
        if condition(&a, &b) > MAX_CONDITION {
            self.build();
            a = self.branch(Some((i, true)));
            b = self.branch(Some((i, false)));
        }
        (Some(a), Some(b))
    }

    /// Total weight of the current conditioning event.
    pub(crate) fn total(&mut self) -> BranchWeights {
        self.ensure_grid();
        let w = self.branch(None);
        if condition(&w, &BranchWeights::FORCED) > MAX_CONDITION {
            self.build();
            return self.branch(None);
        }
        w
    }

    /// `Pr[i in S | I, J]` under `mu'(S) ∝ z^S E_l(V_S V_S^T + lambda I)`.
    pub(crate) fn marginal(&mut self, i: usize) -> Result<f64> {
        let (can_in, can_out) = self.feasible(i);
        match (can_in, can_out) {
            (false, false) => return Err(DesignError::ZeroProbabilityCondition),
            (true, false) => return Ok(1.0),
            (false, true) => return Ok(0.0),
            _ => {}
        }
        let (a, b) = self.branches(i);
        let (a, b) = (a.expect("feasible"), b.expect("feasible"));
        let total = a.hi.add(&b.hi);
        let p = a.hi.ratio(&total).ok_or(DesignError::ZeroProbabilityCondition)?;
        clamp_probability(p)
    }

    pub(crate) fn commit(&mut self, i: usize, include: bool) {
        assert_eq!(self.status[i], Status::Free, "index {i} already decided");
        self.status[i] = if include { Status::In } else { Status::Out };
        if include {
            self.n_in += 1;
        }
        let zi = self.z[i];
        let Some(grid) = self.grid.as_mut() else { return };
        if zi == 0.0 {
            return;
        }
        let one = C64::new(1.0, 0.0);
        let vi = self.v.column(i);
        let vi = vi.as_slice();
        let norm2 = self.v.column(i).norm_squared();
        let rz = grid.radius * zi;
        let q_real = rz / (1.0 + rz);
        for j in 0..grid.n_t {
            let tz = grid.t[j] * zi;
            let q = tz / (one + tz);
            grid.log_sum[j] -= (one + tz).ln();
            if include {
                grid.log_sum[j] += tz.ln();
                add_outer(&mut grid.w[j], vi, one - q);
            } else {
                add_outer(&mut grid.w[j], vi, -q);
            }
        }
        if include {
            grid.kept_mass += (1.0 - q_real) * norm2;
        } else {
            grid.removed_mass += q_real * norm2;
            grid.kept_mass -= q_real * norm2;
        }
    }

    pub(crate) fn included(&self) -> Vec<usize> {
        (0..self.status.len()).filter(|&i| self.status[i] == Status::In).collect()
    }
}

fn condition(a: &BranchWeights, b: &BranchWeights) -> f64 {
    let total = a.hi.add(&b.hi);
    let abs = a.abs.add(&b.abs);
    abs.ratio(&total).unwrap_or(f64::INFINITY)
}

pub(crate) fn clamp_probability(p: f64) -> Result<f64> {
    if !p.is_finite() {
        return Err(DesignError::NumericalInstability(format!("marginal probability is {p}")));
    }
    if p < -CLAMP_TOL || p > 1.0 + CLAMP_TOL {
        return Err(DesignError::NumericalInstability(format!("marginal probability {p} outside [0, 1]")));
    }
    Ok(p.clamp(0.0, 1.0))
}
