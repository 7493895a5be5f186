//! Convex inner approximation of the DistFlow feasible set.
//!
//! The squared branch currents are replaced by an envelope `l^b <= l <= l^u`.
//! Over that envelope the compact model gives interval bounds on flows and
//! voltages (`P^±`, `Q^±`, `V^±`), which are affine in the decision vector
//! and the scenario. A Taylor cut of `(P^2 + Q^2) / V` keeps the true current
//! above `l^b`; an epigraph bound with denominator `V_min` keeps it below
//! `l^u`. A dispatch accepted by the system therefore admits a power-flow
//! solution inside the envelope, and voltage and current limits hold there.
//!
//! Layout of the decision vector `y`: `(P^PV, Q^PV)` per PV bus, then `l^b`
//! and `l^u` per branch. Layout of the scenario `x`: `(P^L, Q^L, P̄^PV)` per
//! bus. Every row is an [`AffineExpr`] read as `expr <= 0`; every SOC block
//! reads `||vector||_2 <= bound`.
//!
//! Row census for `n` branches and `k` PV buses:
//!
//! | family          | linear rows | SOC blocks |
//! |-----------------|-------------|------------|
//! | PV box          | `2k`        |            |
//! | `l^b <= l^u`    | `n`         |            |
//! | `l^u <= l_max`  | `n`         |            |
//! | voltage low/high| `2n`        |            |
//! | Taylor          | `n`         |            |
//! | inverter disk   |             | `k`        |
//! | epigraph        |             | `4n`       |
//!
//! so `2k + 5n` linear rows and `k + 4n` blocks.

mod taylor;

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Dispatch, DistFlowMatrices, NetworkData, Scenario};

pub use taylor::{make_taylor_cuts, TaylorCut};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    PvBox,
    EnvelopeOrder,
    CurrentLimit,
    VoltageLow,
    VoltageHigh,
    Taylor,
    Inverter,
    Epigraph,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::PvBox,
        Family::EnvelopeOrder,
        Family::CurrentLimit,
        Family::VoltageLow,
        Family::VoltageHigh,
        Family::Taylor,
        Family::Inverter,
        Family::Epigraph,
    ];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::PvBox => "pv_box",
            Family::EnvelopeOrder => "envelope_order",
            Family::CurrentLimit => "current_limit",
            Family::VoltageLow => "voltage_low",
            Family::VoltageHigh => "voltage_high",
            Family::Taylor => "taylor",
            Family::Inverter => "inverter",
            Family::Epigraph => "epigraph",
        };
        f.write_str(s)
    }
}

/// Squared-current envelope per branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentEnvelope {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl CurrentEnvelope {
    pub fn degenerate(l: &[f64]) -> Self {
        CurrentEnvelope {
            lower: l.to_vec(),
            upper: l.to_vec(),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Dimension {
                what: "current envelope",
                expected: n,
                got: self.lower.len(),
            });
        }
        if let Some(k) = (0..n).find(|&k| self.lower[k] > self.upper[k]) {
            return Err(Error::Input(format!(
                "envelope lower bound {} exceeds upper bound {} on branch {k}",
                self.lower[k], self.upper[k]
            )));
        }
        Ok(())
    }
}

/// Index arithmetic for the decision and scenario vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub n: usize,
    pub pv_buses: Vec<usize>,
}

impl Layout {
    pub fn of(net: &NetworkData) -> Self {
        Layout {
            n: net.n(),
            pv_buses: net.pv_buses().to_vec(),
        }
    }

    pub fn k(&self) -> usize {
        self.pv_buses.len()
    }
    pub fn dim_y(&self) -> usize {
        2 * self.k() + 2 * self.n
    }
    pub fn dim_x(&self) -> usize {
        3 * self.n
    }
    pub fn dim_f(&self) -> usize {
        2 * self.k()
    }
    pub fn y_p(&self, i: usize) -> usize {
        i
    }
    pub fn y_q(&self, i: usize) -> usize {
        self.k() + i
    }
    pub fn y_lb(&self, j: usize) -> usize {
        2 * self.k() + j
    }
    pub fn y_lu(&self, j: usize) -> usize {
        2 * self.k() + self.n + j
    }
    pub fn x_pl(&self, j: usize) -> usize {
        j
    }
    pub fn x_ql(&self, j: usize) -> usize {
        self.n + j
    }
    pub fn x_pbar(&self, j: usize) -> usize {
        2 * self.n + j
    }

    pub fn pack(&self, d: &Dispatch, env: &CurrentEnvelope) -> Vec<f64> {
        let mut y = d.as_slice().to_vec();
        y.extend_from_slice(&env.lower);
        y.extend_from_slice(&env.upper);
        y
    }

    pub fn unpack(&self, y: &[f64]) -> (Dispatch, CurrentEnvelope) {
        let f = self.dim_f();
        let d = Dispatch(y[..f].to_vec());
        let env = CurrentEnvelope {
            lower: y[f..f + self.n].to_vec(),
            upper: y[f + self.n..f + 2 * self.n].to_vec(),
        };
        (d, env)
    }
}

/// `y . self.y + x . self.x + self.c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineExpr {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub c: f64,
}

impl AffineExpr {
    pub fn zeros(dim_y: usize, dim_x: usize) -> Self {
        AffineExpr {
            y: vec![0.0; dim_y],
            x: vec![0.0; dim_x],
            c: 0.0,
        }
    }

    pub fn constant(dim_y: usize, dim_x: usize, c: f64) -> Self {
        AffineExpr {
            c,
            ..Self::zeros(dim_y, dim_x)
        }
    }

    pub fn eval(&self, y: &[f64], x: &[f64]) -> f64 {
        dot(&self.y, y) + dot(&self.x, x) + self.c
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &AffineExpr) {
        if a == 0.0 {
            return;
        }
        for (s, o) in self.y.iter_mut().zip(&other.y) {
            *s += a * o;
        }
        for (s, o) in self.x.iter_mut().zip(&other.x) {
            *s += a * o;
        }
        self.c += a * other.c;
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = AffineExpr::zeros(self.y.len(), self.x.len());
        out.axpy(a, self);
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub family: Family,
    pub index: usize,
    pub expr: AffineExpr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocBlock {
    pub family: Family,
    pub index: usize,
    pub vector: Vec<AffineExpr>,
    pub bound: AffineExpr,
}

impl SocBlock {
    /// `bound - ||vector||`; non-negative inside the cone.
    pub fn margin(&self, y: &[f64], x: &[f64]) -> f64 {
        let norm = self
            .vector
            .iter()
            .map(|e| e.eval(y, x).powi(2))
            .sum::<f64>()
            .sqrt();
        self.bound.eval(y, x) - norm
    }
}

/// How the Taylor cut picks the interval end for each Jacobian sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Pairing {
    /// Positive slopes take the lower bound and negative slopes the upper
    /// bound, which minimises the cut over the box.
    #[default]
    Sound,
    /// Positive slopes take the upper bound. Kept for comparison only; it can
    /// overestimate the current and accept infeasible dispatches.
    Upper,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InnerOptions {
    pub pairing: Pairing,
    /// Per-branch reference current used to balance the rotated-cone form of
    /// the epigraph rows: `alpha = sqrt(V_min / l_ref)`. With `None` every
    /// `alpha` is 1. The cone is the same set either way; the scaling only
    /// matters once the 2-norm is replaced by the 1-norm.
    pub epigraph_reference: Option<Vec<f64>>,
}

/// Interval bounds on flows and non-root voltages over an envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxBounds {
    pub p_hi: Vec<f64>,
    pub p_lo: Vec<f64>,
    pub q_hi: Vec<f64>,
    pub q_lo: Vec<f64>,
    pub v_hi: Vec<f64>,
    pub v_lo: Vec<f64>,
}

/// Bounds on `P`, `Q`, `V` valid for every `l` in the envelope, for fixed
/// nodal injections `p`, `q` (consumption positive).
pub fn aux_bounds(
    mat: &DistFlowMatrices,
    p: &[f64],
    q: &[f64],
    env: &CurrentEnvelope,
) -> Result<AuxBounds> {
    let n = mat.n();
    if p.len() != n || q.len() != n {
        return Err(Error::Dimension {
            what: "nodal injections",
            expected: n,
            got: p.len(),
        });
    }
    env.check(n)?;
    let mut out = AuxBounds {
        p_hi: vec![0.0; n],
        p_lo: vec![0.0; n],
        q_hi: vec![0.0; n],
        q_lo: vec![0.0; n],
        v_hi: vec![mat.v0; n],
        v_lo: vec![mat.v0; n],
    };
    let (lb, lu) = (&env.lower, &env.upper);
    for j in 0..n {
        for m in 0..n {
            let cp = mat.c[(j, m)] * p[m];
            let cq = mat.c[(j, m)] * q[m];
            let (rp, rn) = (mat.d_r_split.pos[(j, m)], mat.d_r_split.neg[(j, m)]);
            let (xp, xn) = (mat.d_x_split.pos[(j, m)], mat.d_x_split.neg[(j, m)]);
            let (hp, hn) = (mat.h_split.pos[(j, m)], mat.h_split.neg[(j, m)]);
            out.p_hi[j] += cp - rp * lb[m] - rn * lu[m];
            out.p_lo[j] += cp - rp * lu[m] - rn * lb[m];
            out.q_hi[j] += cq - xp * lb[m] - xn * lu[m];
            out.q_lo[j] += cq - xp * lu[m] - xn * lb[m];
            let inj = mat.m_p[(j, m)] * p[m] + mat.m_q[(j, m)] * q[m];
            out.v_hi[j] -= inj + hp * lb[m] + hn * lu[m];
            out.v_lo[j] -= inj + hp * lu[m] + hn * lb[m];
        }
    }
    Ok(out)
}

struct AuxExprs {
    p_hi: Vec<AffineExpr>,
    p_lo: Vec<AffineExpr>,
    q_hi: Vec<AffineExpr>,
    q_lo: Vec<AffineExpr>,
    v_hi: Vec<AffineExpr>,
    v_lo: Vec<AffineExpr>,
}

fn aux_exprs(lay: &Layout, mat: &DistFlowMatrices) -> AuxExprs {
    let (n, dy, dx) = (lay.n, lay.dim_y(), lay.dim_x());
    // nodal injections as expressions
    let mut p_inj: Vec<AffineExpr> = (0..n).map(|_| AffineExpr::zeros(dy, dx)).collect();
    let mut q_inj = p_inj.clone();
    for m in 0..n {
        p_inj[m].x[lay.x_pl(m)] = 1.0;
        q_inj[m].x[lay.x_ql(m)] = 1.0;
    }
    for (i, &m) in lay.pv_buses.iter().enumerate() {
        p_inj[m].y[lay.y_p(i)] = -1.0;
        q_inj[m].y[lay.y_q(i)] = -1.0;
    }
    let zero = AffineExpr::zeros(dy, dx);
    let mut out = AuxExprs {
        p_hi: vec![zero.clone(); n],
        p_lo: vec![zero.clone(); n],
        q_hi: vec![zero.clone(); n],
        q_lo: vec![zero; n],
        v_hi: vec![AffineExpr::constant(dy, dx, mat.v0); n],
        v_lo: vec![AffineExpr::constant(dy, dx, mat.v0); n],
    };
    for j in 0..n {
        for m in 0..n {
            let c = mat.c[(j, m)];
            out.p_hi[j].axpy(c, &p_inj[m]);
            out.p_lo[j].axpy(c, &p_inj[m]);
            out.q_hi[j].axpy(c, &q_inj[m]);
            out.q_lo[j].axpy(c, &q_inj[m]);
            for v in [&mut out.v_hi[j], &mut out.v_lo[j]] {
                v.axpy(-mat.m_p[(j, m)], &p_inj[m]);
                v.axpy(-mat.m_q[(j, m)], &q_inj[m]);
            }
            let (lb, lu) = (lay.y_lb(m), lay.y_lu(m));
            let (rp, rn) = (mat.d_r_split.pos[(j, m)], mat.d_r_split.neg[(j, m)]);
            let (xp, xn) = (mat.d_x_split.pos[(j, m)], mat.d_x_split.neg[(j, m)]);
            let (hp, hn) = (mat.h_split.pos[(j, m)], mat.h_split.neg[(j, m)]);
            out.p_hi[j].y[lb] -= rp;
            out.p_hi[j].y[lu] -= rn;
            out.p_lo[j].y[lu] -= rp;
            out.p_lo[j].y[lb] -= rn;
            out.q_hi[j].y[lb] -= xp;
            out.q_hi[j].y[lu] -= xn;
            out.q_lo[j].y[lu] -= xp;
            out.q_lo[j].y[lb] -= xn;
            out.v_hi[j].y[lb] -= hp;
            out.v_hi[j].y[lu] -= hn;
            out.v_lo[j].y[lu] -= hp;
            out.v_lo[j].y[lb] -= hn;
        }
    }
    out
}

/// Assembled inner approximation. Immutable once built.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InnerSystem {
    pub layout: Layout,
    pub rows: Vec<LinearRow>,
    pub blocks: Vec<SocBlock>,
    pub cuts: Vec<TaylorCut>,
    pub pairing: Pairing,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Census {
    pub linear: usize,
    pub soc: usize,
}

impl Census {
    pub fn expected(n: usize, k: usize) -> Self {
        Census {
            linear: 2 * k + 5 * n,
            soc: k + 4 * n,
        }
    }
}

/// Smallest margin per constraint family; negative means violated.
#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub feasible: bool,
    pub margins: Vec<(Family, f64)>,
}

impl Membership {
    pub fn min_margin(&self) -> f64 {
        self.margins
            .iter()
            .map(|m| m.1)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn margin(&self, family: Family) -> f64 {
        self.margins
            .iter()
            .find(|m| m.0 == family)
            .map_or(f64::INFINITY, |m| m.1)
    }
}

pub fn assemble_inner_system(
    net: &NetworkData,
    mat: &DistFlowMatrices,
    cuts: &[TaylorCut],
    opts: &InnerOptions,
) -> Result<InnerSystem> {
    let lay = Layout::of(net);
    let (n, k, dy, dx) = (lay.n, lay.k(), lay.dim_y(), lay.dim_x());
    if mat.n() != n {
        return Err(Error::Dimension {
            what: "distflow matrices",
            expected: n,
            got: mat.n(),
        });
    }
    let mut by_branch: Vec<Option<&TaylorCut>> = vec![None; n];
    for c in cuts {
        if c.branch < n {
            by_branch[c.branch] = Some(c);
        }
    }
    if let Some(j) = by_branch.iter().position(Option::is_none) {
        return Err(Error::Input(format!("no Taylor cut for branch {j}")));
    }
    let alpha: Vec<f64> = match &opts.epigraph_reference {
        None => vec![1.0; n],
        Some(r) => {
            if r.len() != n {
                return Err(Error::Dimension {
                    what: "epigraph reference",
                    expected: n,
                    got: r.len(),
                });
            }
            if let Some(j) = r.iter().position(|v| !(*v > 0.0)) {
                return Err(Error::Input(format!(
                    "epigraph reference on branch {j} must be positive"
                )));
            }
            r.iter().map(|l| (net.v_min / l).sqrt()).collect()
        }
    };
    if mat.d_r_split.pos.iter().any(|&v| v > 0.0) {
        log::debug!("D_R has positive entries; flow bounds use the full sign split");
    }

    let aux = aux_exprs(&lay, mat);
    let mut rows = Vec::with_capacity(2 * k + 5 * n);
    let mut row = |family, index, expr| {
        rows.push(LinearRow {
            family,
            index,
            expr,
        })
    };

    for (i, &m) in lay.pv_buses.iter().enumerate() {
        let mut lo = AffineExpr::zeros(dy, dx);
        lo.y[lay.y_p(i)] = -1.0;
        row(Family::PvBox, i, lo);
        let mut hi = AffineExpr::zeros(dy, dx);
        hi.y[lay.y_p(i)] = 1.0;
        hi.x[lay.x_pbar(m)] = -1.0;
        row(Family::PvBox, i, hi);
    }
    for j in 0..n {
        let mut e = AffineExpr::zeros(dy, dx);
        e.y[lay.y_lb(j)] = 1.0;
        e.y[lay.y_lu(j)] = -1.0;
        row(Family::EnvelopeOrder, j, e);
    }
    for j in 0..n {
        let mut e = AffineExpr::constant(dy, dx, -net.l_max[j]);
        e.y[lay.y_lu(j)] = 1.0;
        row(Family::CurrentLimit, j, e);
    }
    for j in 0..n {
        let mut e = aux.v_lo[j].scaled(-1.0);
        e.c += net.v_min;
        row(Family::VoltageLow, j, e);
    }
    for j in 0..n {
        let mut e = aux.v_hi[j].clone();
        e.c -= net.v_max;
        row(Family::VoltageHigh, j, e);
    }
    let root_v = AffineExpr::constant(dy, dx, net.v0);
    let sending = |j: usize| -> (&AffineExpr, &AffineExpr) {
        match net.parent(j + 1) {
            0 => (&root_v, &root_v),
            par => (&aux.v_hi[par - 1], &aux.v_lo[par - 1]),
        }
    };
    for j in 0..n {
        let cut = by_branch[j].expect("checked above");
        let (v_hi, v_lo) = sending(j);
        let pick = |slope: f64, hi: &AffineExpr, lo: &AffineExpr| -> AffineExpr {
            let use_lo = match opts.pairing {
                Pairing::Sound => slope >= 0.0,
                Pairing::Upper => slope < 0.0,
            };
            (if use_lo { lo } else { hi }).scaled(slope)
        };
        // l^b - cut(selected bounds) <= 0
        let mut e = AffineExpr::constant(dy, dx, -cut.constant());
        e.y[lay.y_lb(j)] = 1.0;
        e.axpy(-1.0, &pick(cut.jp, &aux.p_hi[j], &aux.p_lo[j]));
        e.axpy(-1.0, &pick(cut.jq, &aux.q_hi[j], &aux.q_lo[j]));
        e.axpy(-1.0, &pick(cut.jv, v_hi, v_lo));
        row(Family::Taylor, j, e);
    }

    let mut blocks = Vec::with_capacity(k + 4 * n);
    for (i, &m) in lay.pv_buses.iter().enumerate() {
        let mut p = AffineExpr::zeros(dy, dx);
        p.y[lay.y_p(i)] = 1.0;
        let mut q = AffineExpr::zeros(dy, dx);
        q.y[lay.y_q(i)] = 1.0;
        blocks.push(SocBlock {
            family: Family::Inverter,
            index: i,
            vector: vec![p, q],
            bound: AffineExpr::constant(dy, dx, net.inv_cap[m]),
        });
    }
    for j in 0..n {
        let a = alpha[j];
        let vm = net.v_min;
        let combos = [(true, true), (true, false), (false, false), (false, true)];
        for (sp, sq) in combos {
            let p = if sp { &aux.p_hi[j] } else { &aux.p_lo[j] };
            let q = if sq { &aux.q_hi[j] } else { &aux.q_lo[j] };
            // P^2 + Q^2 <= V_min l^u as a rotated cone
            let mut diff = AffineExpr::constant(dy, dx, -vm / a);
            diff.y[lay.y_lu(j)] = a;
            let mut bound = AffineExpr::constant(dy, dx, vm / a);
            bound.y[lay.y_lu(j)] = a;
            blocks.push(SocBlock {
                family: Family::Epigraph,
                index: j,
                vector: vec![p.scaled(2.0), q.scaled(2.0), diff],
                bound,
            });
        }
    }

    Ok(InnerSystem {
        layout: lay,
        rows,
        blocks,
        cuts: cuts.to_vec(),
        pairing: opts.pairing,
        alpha,
    })
}

impl InnerSystem {
    pub fn census(&self) -> Census {
        Census {
            linear: self.rows.len(),
            soc: self.blocks.len(),
        }
    }

    pub fn membership(&self, y: &[f64], x: &[f64], tol: f64) -> Result<Membership> {
        let lay = &self.layout;
        if y.len() != lay.dim_y() {
            return Err(Error::Dimension {
                what: "inner decision vector",
                expected: lay.dim_y(),
                got: y.len(),
            });
        }
        if x.len() != lay.dim_x() {
            return Err(Error::Dimension {
                what: "scenario",
                expected: lay.dim_x(),
                got: x.len(),
            });
        }
        let mut margins: Vec<(Family, f64)> = Vec::new();
        let mut record = |fam: Family, m: f64| match margins.iter_mut().find(|e| e.0 == fam) {
            Some(e) => e.1 = e.1.min(m),
            None => margins.push((fam, m)),
        };
        for r in &self.rows {
            record(r.family, -r.expr.eval(y, x));
        }
        for b in &self.blocks {
            record(b.family, b.margin(y, x));
        }
        margins.sort_by_key(|m| m.0);
        let feasible = margins.iter().all(|m| m.1 >= -tol);
        Ok(Membership { feasible, margins })
    }

    pub fn contains(
        &self,
        d: &Dispatch,
        env: &CurrentEnvelope,
        x: &Scenario,
        tol: f64,
    ) -> Result<Membership> {
        self.membership(&self.layout.pack(d, env), x.as_slice(), tol)
    }

    /// Plain-text dump: one line per row or cone component, nonzeros only.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let lay = &self.layout;
        writeln!(
            w,
            "# inner system: dim_y {} dim_x {}",
            lay.dim_y(),
            lay.dim_x()
        )?;
        writeln!(
            w,
            "# linear rows read expr <= 0; cone blocks read ||vec|| <= bound"
        )?;
        let fmt_expr = |e: &AffineExpr| -> String {
            let mut s = String::new();
            for (i, v) in e.y.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                s.push_str(&format!(" y{i}:{v:e}"));
            }
            for (i, v) in e.x.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                s.push_str(&format!(" x{i}:{v:e}"));
            }
            s.push_str(&format!(" c:{:e}", e.c));
            s
        };
        for r in &self.rows {
            writeln!(w, "row {} {}{}", r.family, r.index, fmt_expr(&r.expr))?;
        }
        for (b, blk) in self.blocks.iter().enumerate() {
            writeln!(
                w,
                "cone {b} {} {} bound{}",
                blk.family,
                blk.index,
                fmt_expr(&blk.bound)
            )?;
            for (c, e) in blk.vector.iter().enumerate() {
                writeln!(w, "cone {b} vec{c}{}", fmt_expr(e))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_matrices, feeder_33, solve_power_flow, two_bus};

    fn nominal_system(net: &NetworkData) -> InnerSystem {
        let mat = build_matrices(net);
        let x = net.nominal_scenario();
        let base = solve_power_flow(net, &x, &Dispatch::zero_curtailment(net, &x)).unwrap();
        let cuts = make_taylor_cuts(net, &base).unwrap();
        assemble_inner_system(net, &mat, &cuts, &InnerOptions::default()).unwrap()
    }

    #[test]
    fn degenerate_envelope_gives_exact_values() {
        let net = feeder_33();
        let mat = build_matrices(&net);
        let x = net.nominal_scenario();
        let d = Dispatch::zero_curtailment(&net, &x);
        let s = solve_power_flow(&net, &x, &d).unwrap();
        let (p, q) = crate::network::injections(&net, &x, &d);
        let b = aux_bounds(&mat, &p, &q, &CurrentEnvelope::degenerate(&s.l)).unwrap();
        for j in 0..net.n() {
            assert!((b.p_hi[j] - s.p[j]).abs() < 1e-9 && (b.p_lo[j] - s.p[j]).abs() < 1e-9);
            assert!((b.q_hi[j] - s.q[j]).abs() < 1e-9 && (b.q_lo[j] - s.q[j]).abs() < 1e-9);
            assert!((b.v_hi[j] - s.v[j + 1]).abs() < 1e-9 && (b.v_lo[j] - s.v[j + 1]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_impedance_pins_voltage() {
        let net = feeder_33().with_zero_impedance();
        let mat = build_matrices(&net);
        let n = net.n();
        let env = CurrentEnvelope {
            lower: vec![0.0; n],
            upper: vec![0.3; n],
        };
        let b = aux_bounds(&mat, &net.p_load, &net.q_load, &env).unwrap();
        assert!(b.v_hi.iter().chain(&b.v_lo).all(|&v| v == net.v0));
    }

    #[test]
    fn reversed_envelope_is_rejected() {
        let net = two_bus(0.05, 0.05);
        let mat = build_matrices(&net);
        let env = CurrentEnvelope {
            lower: vec![0.2],
            upper: vec![0.1],
        };
        assert!(matches!(
            aux_bounds(&mat, &[0.1], &[0.0], &env),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn census_matches_formula() {
        for net in [two_bus(0.05, 0.05), feeder_33()] {
            let sys = nominal_system(&net);
            assert_eq!(sys.census(), Census::expected(net.n(), net.pv_count()));
            assert_eq!(sys.layout.dim_y(), 2 * net.pv_count() + 2 * net.n());
        }
    }

    #[test]
    fn unloaded_zero_point_is_member() {
        let mut net = two_bus(0.05, 0.05);
        net.p_load = vec![0.0];
        net.q_load = vec![0.0];
        net.pv_avail = vec![0.0];
        let sys = nominal_system(&net);
        let y = vec![0.0; sys.layout.dim_y()];
        let x = vec![0.0; sys.layout.dim_x()];
        assert!(sys.membership(&y, &x, 1e-9).unwrap().feasible);
    }

    #[test]
    fn box_violation_is_flagged() {
        let net = two_bus(0.05, 0.05);
        let sys = nominal_system(&net);
        let x = net.nominal_scenario();
        let mut d = Dispatch::zero_curtailment(&net, &x);
        d.0[0] *= 1.01;
        let env = CurrentEnvelope {
            lower: vec![0.0],
            upper: vec![0.1],
        };
        let m = sys.contains(&d, &env, &x, 1e-9).unwrap();
        assert!(!m.feasible);
        assert!(m.margin(Family::PvBox) < 0.0);
    }

    #[test]
    fn text_dump_lists_every_row() {
        let net = two_bus(0.05, 0.05);
        let sys = nominal_system(&net);
        let mut buf = Vec::new();
        sys.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().filter(|l| l.starts_with("row ")).count(),
            sys.rows.len()
        );
    }
}
