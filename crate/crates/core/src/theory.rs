//! Closed-form quantities from the competitive analysis.
//!
//! For a sampling parameter `p < 1/2`:
//!
//! * `c = 4p(1 − p)` and `α = (p + (1 − p)·ln(1 − p)) / (2(1 − p)p²)`;
//! * `P(AllKicked(i, B)) <= α·c^(d+1) / (1 − c)` with `d = brank(i, B)`;
//! * `g(m, B)`, the sum of `c^(1 + brank(i, B'))` over the `m` heaviest
//!   elements of `OPT(B)` and the nodes between `M(i)` and `B`, is at most
//!   `2c_1 + … + 2c_(m−1) + c_m + c_m·c_(k−m)` with `c_i = c + … + c^i` and
//!   `k = μ(B)`, hence at most `2c/(1 − c)·m` when `c < 1/2`;
//! * `E[w(SOL)] >= p·(1 − 2αc/(1 − c)²)·w(OPT)`.
//!
//! All logarithms are natural.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matroid::{brank_dense, true_optima};
use crate::model::{FSum, Index, LaminarInstance, NodeId};

/// Absolute tolerance for comparisons between computed real quantities.
pub const TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TheoryParams {
    pub p: f64,
    pub alpha: f64,
    pub c: f64,
    /// `c / (1 − c)`.
    pub c_geo: f64,
}

fn check_half_open(p: f64) -> Result<()> {
    if p > 0.0 && p < 0.5 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name: "p",
            value: p,
            expected: "0 < p < 1/2",
        })
    }
}

/// `p + (1 − p)·ln(1 − p)`. Below `1e-4` the power series
/// `Σ_{k>=2} p^k / (k(k − 1))` replaces the cancelling closed form.
fn alpha_numerator(p: f64) -> f64 {
    if p >= 1e-4 {
        return p + (1.0 - p) * (-p).ln_1p();
    }
    let mut sum = 0.0;
    let mut pk = p * p;
    for k in 2..12 {
        sum += pk / (k * (k - 1)) as f64;
        pk *= p;
    }
    sum
}

pub fn theory_params(p: f64) -> Result<TheoryParams> {
    check_half_open(p)?;
    let c = 4.0 * p * (1.0 - p);
    let alpha = alpha_numerator(p) / (2.0 * (1.0 - p) * p * p);
    Ok(TheoryParams {
        p,
        alpha,
        c,
        c_geo: c / (1.0 - c),
    })
}

/// The sign-flipped form of `α` produced by the integration step,
/// `−(p − (p − 1)·ln(1 − p)) / (2(p − 1)p²)`, evaluated literally.
pub fn alpha_integrated_form(p: f64) -> f64 {
    -(p - (p - 1.0) * (1.0 - p).ln()) / (2.0 * (p - 1.0) * p * p)
}

/// Upper bound on `P(AllKicked(i, B))` for an element with backward rank `d`.
pub fn allkicked_bound(params: &TheoryParams, d: usize) -> f64 {
    params.alpha * params.c.powi(d as i32 + 1) / (1.0 - params.c)
}

/// Relative entropy `x·ln(x/y) + (1 − x)·ln((1 − x)/(1 − y))`, with `0·ln 0 = 0`.
pub fn rel_ent(x: f64, y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::OutOfRange {
            name: "x",
            value: x,
            expected: "0 <= x <= 1",
        });
    }
    if !(y > 0.0 && y < 1.0) {
        return Err(Error::OutOfRange {
            name: "y",
            value: y,
            expected: "0 < y < 1",
        });
    }
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    Ok(term(x, y) + term(1.0 - x, 1.0 - y))
}

/// `c_i = c + c² + … + c^i`, with `c_0 = 0`.
pub fn c_partial(i: usize, c: f64) -> f64 {
    c * (1.0 - c.powi(i as i32)) / (1.0 - c)
}

fn check_c(c: f64) -> Result<()> {
    if c > 0.0 && c < 0.5 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name: "c",
            value: c,
            expected: "0 < c < 1/2",
        })
    }
}

/// `2c_1 + … + 2c_(m−1) + c_m + c_m·c_(k−m)`.
pub fn g_refined_bound(m: usize, k: usize, c: f64) -> Result<f64> {
    check_c(c)?;
    if m > k {
        return Err(Error::OutOfRange {
            name: "m",
            value: m as f64,
            expected: "m <= k",
        });
    }
    if m == 0 {
        return Ok(0.0);
    }
    let inner: f64 = (1..m).map(|i| 2.0 * c_partial(i, c)).fsum();
    let cm = c_partial(m, c);
    Ok(inner + cm + cm * c_partial(k - m, c))
}

/// `2c/(1 − c)·m`.
pub fn g_weak_bound(m: usize, c: f64) -> f64 {
    2.0 * c / (1.0 - c) * m as f64
}

/// True optima and the per-element chain sums they induce.
pub(crate) struct PenaltyTable<'a> {
    ix: &'a Index,
    opt: Vec<Vec<usize>>,
    c: f64,
}

impl<'a> PenaltyTable<'a> {
    pub fn new(inst: &'a LaminarInstance, c: f64) -> Self {
        let ix = inst.index();
        PenaltyTable {
            ix,
            opt: true_optima(ix),
            c,
        }
    }

    pub fn opt(&self, node: usize) -> &[usize] {
        &self.opt[node]
    }

    /// Backward rank against `OPT(B)` padded to `μ(B)`, as the analysis
    /// assumes infinitesimal elements fill every optimum.
    fn brank(&self, elem: usize, node: usize) -> usize {
        brank_dense(self.ix, elem, node, &self.opt[node], true)
    }

    /// `Σ_{B' ∈ Chain[M(i), B]} c^(1 + brank(i, B'))`.
    pub fn chain_sum(&self, elem: usize, node: usize) -> f64 {
        self.ix
            .chain_to(elem, node)
            .iter()
            .map(|&b| self.c.powi(1 + self.brank(elem, b) as i32))
            .fsum()
    }

    /// `g(m, B)`; `m` must not exceed `|OPT(B)|`.
    pub fn g(&self, m: usize, node: usize) -> f64 {
        self.opt[node][..m]
            .iter()
            .map(|&i| self.chain_sum(i, node))
            .fsum()
    }
}

/// `g(m, B)` evaluated exactly from the true optima.
pub fn g_exact(inst: &LaminarInstance, m: usize, node: NodeId, c: f64) -> Result<f64> {
    let b = inst.node_idx(node)?;
    let table = PenaltyTable::new(inst, c);
    let size = table.opt(b).len();
    if m > size {
        return Err(Error::OutOfRange {
            name: "m",
            value: m as f64,
            expected: "m <= |OPT(B)|",
        });
    }
    Ok(table.g(m, b))
}

/// `Σ_{i ∈ OPT} w(i) Σ_{B ∈ F(i)} c^(1 + brank(i, B))`.
pub fn weighted_penalty(inst: &LaminarInstance, c: f64) -> Result<f64> {
    check_c(c)?;
    let table = PenaltyTable::new(inst, c);
    let ix = inst.index();
    Ok(table
        .opt(ix.root)
        .iter()
        .map(|&i| ix.weight[i] * table.chain_sum(i, ix.root))
        .fsum())
}

/// The same penalty by summation by parts:
/// `Σ_l (w(x_l) − w(x_(l+1)))·g(l, U)` over `OPT` sorted heaviest first, `w(x_(L+1)) = 0`.
pub fn telescoped_penalty(inst: &LaminarInstance, c: f64) -> Result<f64> {
    check_c(c)?;
    let table = PenaltyTable::new(inst, c);
    let ix = inst.index();
    let opt = table.opt(ix.root);
    Ok((1..=opt.len())
        .map(|l| {
            let next = opt.get(l).map_or(0.0, |&x| ix.weight[x]);
            (ix.weight[opt[l - 1]] - next) * table.g(l, ix.root)
        })
        .fsum())
}

/// `p·(1 − 2αc/(1 − c)²)`. Negative once `p` exceeds about 0.1352.
pub fn ratio_lower_bound(p: f64) -> Result<f64> {
    let t = theory_params(p)?;
    Ok(p * (1.0 - 2.0 * t.alpha * t.c / ((1.0 - t.c) * (1.0 - t.c))))
}

/// Grid argmax of [`ratio_lower_bound`] over `p = step, 2·step, …` below 1/2.
pub fn best_p(step: f64) -> Result<(f64, f64)> {
    best_p_in(step, 0.5 - 2.0 * TOLERANCE, step)
}

/// Grid argmax over `p_min, p_min + step, …, <= p_max`; the first maximizer wins.
pub fn best_p_in(p_min: f64, p_max: f64, step: f64) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for p in grid(p_min, p_max, step)? {
        let v = ratio_lower_bound(p)?;
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((p, v));
        }
    }
    best.ok_or(Error::OutOfRange {
        name: "step",
        value: step,
        expected: "grid with at least one point in (0, 1/2)",
    })
}

/// Grid points computed as `p_min + j·step` to avoid accumulated drift.
pub fn grid(p_min: f64, p_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::OutOfRange {
            name: "step",
            value: step,
            expected: "step > 0",
        });
    }
    let mut points = Vec::new();
    for j in 0.. {
        let p = p_min + j as f64 * step;
        if p > p_max + TOLERANCE {
            break;
        }
        check_half_open(p)?;
        points.push(p);
    }
    Ok(points)
}

#[derive(Serialize)]
struct TheoryRow {
    p: f64,
    alpha: f64,
    c: f64,
    ratio_lower_bound: f64,
}

/// CSV with columns `p,alpha,c,ratio_lower_bound`.
pub fn write_theory_csv<W: Write>(ps: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for &p in ps {
        let t = theory_params(p)?;
        w.serialize(TheoryRow {
            p,
            alpha: t.alpha,
            c: t.c,
            ratio_lower_bound: ratio_lower_bound(p)?,
        })?;
    }
    w.flush()?;
    Ok(())
}
