//! Dense two-phase primal simplex.
//!
//! Sized for the offline robust-rule LPs (up to a few thousand rows and
//! columns). Entering variables are chosen by largest reduced cost; after a
//! run of degenerate pivots the solver switches to Bland's rule until the
//! objective moves again, which rules out cycling. Once optimal, the basic
//! solution is recomputed from the original data with an LU solve to shed
//! accumulated tableau round-off.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("problem is infeasible (phase-one residual {0:.3e})")]
    Infeasible(f64),
    #[error("problem is unbounded")]
    Unbounded,
    #[error("iteration limit of {0} reached")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    NonNegative,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize c^T v` subject to linear rows; variables are either
/// non-negative or free.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    kinds: Vec<VarKind>,
    objective: Vec<f64>,
    rows: Vec<Constraint>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub value: f64,
    pub x: Vec<f64>,
    /// Multiplier per row, signed so that `c = A^T y` on the free
    /// variables at the optimum (`y >= 0` on `<=` rows, `y <= 0` on `>=`
    /// rows). Empty when the optimal basis could not be refactored.
    pub duals: Vec<f64>,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub tol: f64,
    pub pivot_tol: f64,
    /// Degenerate pivots tolerated before switching to Bland's rule.
    pub bland_after: usize,
    pub max_pivots: Option<usize>,
    /// Relative size of the right-hand-side perturbation used against
    /// degeneracy; the final basis is re-solved with the true data.
    pub perturbation: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            tol: 1e-9,
            pivot_tol: 1e-10,
            bland_after: 40,
            max_pivots: None,
            perturbation: 1e-7,
        }
    }
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, kind: VarKind, cost: f64) -> usize {
        self.kinds.push(kind);
        self.objective.push(cost);
        self.kinds.len() - 1
    }

    pub fn add_vars(&mut self, count: usize, kind: VarKind) -> std::ops::Range<usize> {
        let start = self.kinds.len();
        for _ in 0..count {
            self.add_var(kind, 0.0);
        }
        start..self.kinds.len()
    }

    pub fn set_cost(&mut self, var: usize, cost: f64) {
        self.objective[var] = cost;
    }

    /// Adds a row. Duplicate variable entries are summed; zeros dropped.
    pub fn add_row(
        &mut self,
        coeffs: impl IntoIterator<Item = (usize, f64)>,
        relation: Relation,
        rhs: f64,
    ) {
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for (j, a) in coeffs {
            assert!(j < self.kinds.len(), "row references unknown variable {j}");
            match merged.iter_mut().find(|(k, _)| *k == j) {
                Some(e) => e.1 += a,
                None => merged.push((j, a)),
            }
        }
        merged.retain(|&(_, a)| a != 0.0);
        self.rows.push(Constraint {
            coeffs: merged,
            relation,
            rhs,
        });
    }

    pub fn num_vars(&self) -> usize {
        self.kinds.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Constraint] {
        &self.rows
    }

    pub fn kinds(&self) -> &[VarKind] {
        &self.kinds
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or sign restriction at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, v) in self.kinds.iter().zip(x) {
            if *k == VarKind::NonNegative {
                worst = worst.max(-v);
            }
        }
        for row in &self.rows {
            let lhs: f64 = row.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let viol = match row.relation {
                Relation::Le => lhs - row.rhs,
                Relation::Ge => row.rhs - lhs,
                Relation::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        self.solve_with(SimplexOptions::default())
    }

    pub fn solve_with(&self, opts: SimplexOptions) -> Result<LpSolution, LpError> {
        let (scaled, row_scale, col_scale) = self.equilibrated();
        let mut sol = Tableau::build(&scaled).run(&scaled, opts)?;
        for (v, s) in sol.x.iter_mut().zip(&col_scale) {
            *v *= s;
        }
        for (y, r) in sol.duals.iter_mut().zip(&row_scale) {
            *y *= r;
        }
        sol.value = self.objective_value(&sol.x);
        Ok(sol)
    }

    /// Copy with rows and columns scaled to unit max-magnitude (a few
    /// alternating passes, powers of two only so no rounding is introduced).
    /// Returns the copy with its row and column factors.
    fn equilibrated(&self) -> (LinearProgram, Vec<f64>, Vec<f64>) {
        let pow2 = |v: f64| {
            if v > 0.0 && v.is_finite() {
                2f64.powi(-(v.log2().round() as i32))
            } else {
                1.0
            }
        };
        let mut out = self.clone();
        let mut row_scale = vec![1.0; self.rows.len()];
        let mut col_scale = vec![1.0; self.kinds.len()];
        for _ in 0..4 {
            let mut col_max = vec![0.0_f64; self.kinds.len()];
            for row in &out.rows {
                for &(j, a) in &row.coeffs {
                    col_max[j] = col_max[j].max(a.abs());
                }
            }
            let f: Vec<f64> = col_max.iter().map(|&m| pow2(m)).collect();
            for row in &mut out.rows {
                for (j, a) in row.coeffs.iter_mut() {
                    *a *= f[*j];
                }
            }
            for (s, v) in col_scale.iter_mut().zip(&f) {
                *s *= v;
            }
            for (i, row) in out.rows.iter_mut().enumerate() {
                let m = row.coeffs.iter().fold(0.0_f64, |m, &(_, a)| m.max(a.abs()));
                let g = pow2(m);
                row.coeffs.iter_mut().for_each(|(_, a)| *a *= g);
                row.rhs *= g;
                row_scale[i] *= g;
            }
        }
        for (c, s) in out.objective.iter_mut().zip(&col_scale) {
            *c *= s;
        }
        (out, row_scale, col_scale)
    }
}

/// Column bookkeeping for the standard form `A v = b, v >= 0`.
struct Tableau {
    m: usize,
    /// structural + slack + artificial columns (excluding rhs)
    ncols: usize,
    width: usize,
    t: Vec<f64>,
    z: Vec<f64>,
    basis: Vec<usize>,
    /// structural column -> (original var, sign)
    col_var: Vec<(usize, f64)>,
    n_struct: usize,
    first_art: usize,
    /// original constraint matrix in standard form, for reinversion
    a: Vec<f64>,
    b: Vec<f64>,
    /// `b` plus the anti-degeneracy perturbation; what the tableau carries
    b_work: Vec<f64>,
    row_sign: Vec<f64>,
    active_rows: Vec<bool>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let mut col_var = Vec::new();
        let mut var_cols = Vec::with_capacity(lp.kinds.len());
        for (j, kind) in lp.kinds.iter().enumerate() {
            let pos = col_var.len();
            col_var.push((j, 1.0));
            if *kind == VarKind::Free {
                col_var.push((j, -1.0));
            }
            var_cols.push(pos);
        }
        let n_struct = col_var.len();
        let m = lp.rows.len();
        // normalise to non-negative rhs
        let mut rels = Vec::with_capacity(m);
        let mut signs = Vec::with_capacity(m);
        for row in &lp.rows {
            let flip = row.rhs < 0.0;
            signs.push(if flip { -1.0 } else { 1.0 });
            rels.push(match (row.relation, flip) {
                (Relation::Le, true) => Relation::Ge,
                (Relation::Ge, true) => Relation::Le,
                (r, _) => r,
            });
        }
        let n_slack = rels.iter().filter(|r| **r != Relation::Eq).count();
        let n_art = rels.iter().filter(|r| **r != Relation::Le).count();
        let ncols = n_struct + n_slack + n_art;
        let width = ncols + 1;
        let first_art = n_struct + n_slack;
        let mut t = vec![0.0; m * width];
        let mut basis = vec![0; m];
        let mut slack = n_struct;
        let mut art = first_art;
        for (i, row) in lp.rows.iter().enumerate() {
            let s = signs[i];
            let r = &mut t[i * width..(i + 1) * width];
            for &(j, a) in &row.coeffs {
                let c = var_cols[j];
                r[c] += s * a;
                if lp.kinds[j] == VarKind::Free {
                    r[c + 1] -= s * a;
                }
            }
            r[ncols] = s * row.rhs;
            match rels[i] {
                Relation::Le => {
                    r[slack] = 1.0;
                    basis[i] = slack;
                    slack += 1;
                }
                Relation::Ge => {
                    r[slack] = -1.0;
                    slack += 1;
                    r[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    r[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
            }
        }
        let mut a = Vec::with_capacity(m * ncols);
        let mut b = Vec::with_capacity(m);
        for i in 0..m {
            a.extend_from_slice(&t[i * width..i * width + ncols]);
            b.push(t[i * width + ncols]);
        }
        Tableau {
            m,
            ncols,
            width,
            t,
            z: vec![0.0; width],
            basis,
            col_var,
            n_struct,
            first_art,
            a,
            b_work: b.clone(),
            b,
            row_sign: signs,
            active_rows: vec![true; m],
        }
    }

    fn rhs(&self, i: usize) -> f64 {
        self.t[i * self.width + self.ncols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let inv = 1.0 / self.t[r * w + c];
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for v in prow.iter_mut() {
            *v *= inv;
        }
        prow[c] = 1.0;
        let eliminate = |row: &mut [f64]| {
            let f = row[c];
            if f != 0.0 {
                for (x, p) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * p;
                }
                row[c] = 0.0;
            }
        };
        before.chunks_mut(w).for_each(eliminate);
        after.chunks_mut(w).for_each(eliminate);
        eliminate(&mut self.z);
        self.basis[r] = c;
    }

    /// Sets the reduced-cost row for maximising `cost . v` (over columns).
    fn price(&mut self, cost: &[f64]) {
        let w = self.width;
        self.z.iter_mut().for_each(|v| *v = 0.0);
        for (j, &c) in cost.iter().enumerate() {
            self.z[j] = -c;
        }
        for i in 0..self.m {
            if !self.active_rows[i] {
                continue;
            }
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * w..(i + 1) * w];
                for (zj, tj) in self.z.iter_mut().zip(row) {
                    *zj += cb * tj;
                }
            }
        }
        for i in 0..self.m {
            if self.active_rows[i] {
                self.z[self.basis[i]] = 0.0;
            }
        }
    }

    /// Rebuilds the tableau from the original data for the current basis,
    /// discarding accumulated round-off. Returns false if the basis matrix
    /// is numerically singular.
    fn reinvert(&mut self, cost: &[f64]) -> bool {
        let (m, nc, w) = (self.m, self.ncols, self.width);
        let bmat = DMatrix::from_fn(m, m, |i, r| self.a[i * nc + self.basis[r]]);
        let lu = bmat.lu();
        let full = DMatrix::from_fn(m, w, |i, j| {
            if j < nc {
                self.a[i * nc + j]
            } else {
                self.b_work[i]
            }
        });
        let Some(sol) = lu.solve(&full) else {
            return false;
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return false;
        }
        for i in 0..m {
            for j in 0..w {
                self.t[i * w + j] = sol[(i, j)];
            }
        }
        for (r, &c) in self.basis.iter().enumerate() {
            for i in 0..m {
                self.t[i * w + c] = if i == r { 1.0 } else { 0.0 };
            }
        }
        self.price(cost);
        true
    }

    /// Primal simplex on the current reduced-cost row. `allowed` bounds the
    /// entering column range; `cost` is the phase objective.
    fn iterate(
        &mut self,
        allowed: usize,
        cost: &[f64],
        opts: &SimplexOptions,
        pivots: &mut usize,
        limit: usize,
    ) -> Result<(), LpError> {
        let w = self.width;
        let refactor_every = self.m.max(50);
        let mut since_refactor = 0;
        let mut degenerate = 0usize;
        loop {
            let bland = degenerate >= opts.bland_after;
            let mut enter = None;
            let mut best = -opts.tol;
            for j in 0..allowed {
                let d = self.z[j];
                if d < -opts.tol {
                    if bland {
                        enter = Some(j);
                        break;
                    }
                    if d < best {
                        best = d;
                        enter = Some(j);
                    }
                }
            }
            let Some(c) = enter else { return Ok(()) };

            let col_max = (0..self.m)
                .filter(|&i| self.active_rows[i])
                .map(|i| self.t[i * w + c].abs())
                .fold(0.0, f64::max);
            let ptol = opts.pivot_tol.max(1e-9 * col_max);
            let leave = if bland {
                // plain minimum ratio, ties to the smallest basic index
                let mut leave: Option<usize> = None;
                let mut best_ratio = f64::INFINITY;
                for i in (0..self.m).filter(|&i| self.active_rows[i]) {
                    let a = self.t[i * w + c];
                    if a > ptol {
                        let ratio = self.rhs(i).max(0.0) / a;
                        let tie = (ratio - best_ratio).abs() <= 1e-12 * (1.0 + best_ratio.abs());
                        if leave.is_none()
                            || (!tie && ratio < best_ratio)
                            || (tie && self.basis[i] < self.basis[leave.unwrap()])
                        {
                            leave = Some(i);
                            best_ratio = ratio.min(best_ratio);
                        }
                    }
                }
                leave
            } else {
                // Harris: relaxed bound first, then the largest pivot within it
                let mut theta = f64::INFINITY;
                for i in (0..self.m).filter(|&i| self.active_rows[i]) {
                    let a = self.t[i * w + c];
                    if a > ptol {
                        theta = theta.min((self.rhs(i).max(0.0) + opts.tol) / a);
                    }
                }
                let mut leave: Option<usize> = None;
                let mut best_piv = 0.0;
                for i in (0..self.m).filter(|&i| self.active_rows[i]) {
                    let a = self.t[i * w + c];
                    if a > ptol && self.rhs(i).max(0.0) / a <= theta && a > best_piv {
                        best_piv = a;
                        leave = Some(i);
                    }
                }
                leave
            };
            let Some(r) = leave else {
                if self.z[c] < -1e-6 {
                    return Err(LpError::Unbounded);
                }
                // reduced cost at noise level with no usable pivot: drop it
                self.z[c] = 0.0;
                continue;
            };
            let rhs_at = r * w + self.ncols;
            if self.t[rhs_at] < 0.0 {
                // Harris may pick a row already a hair infeasible; clamp it
                // so the step never moves the objective backwards
                self.t[rhs_at] = 0.0;
            }
            if self.rhs(r).max(0.0) / self.t[r * w + c] <= opts.tol {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, c);
            *pivots += 1;
            since_refactor += 1;
            if since_refactor >= refactor_every {
                since_refactor = 0;
                self.reinvert(cost);
            }
            if *pivots > limit {
                return Err(LpError::IterationLimit(limit));
            }
        }
    }

    /// Pushes every right-hand side up by a small deterministic amount. The
    /// rhs is non-negative after normalisation, so this keeps the initial
    /// basis feasible while breaking ties between ratio-test rows.
    fn perturb(&mut self, rel: f64) {
        if rel <= 0.0 {
            return;
        }
        let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
        for i in 0..self.m {
            state = state
                .wrapping_mul(6_364_136_223_846_793_005)
                .wrapping_add(1_442_695_040_888_963_407);
            let u = 0.5 + 0.5 * ((state >> 11) as f64 / (1u64 << 53) as f64);
            let eps = rel * (1.0 + self.b[i].abs()) * u;
            self.b_work[i] += eps;
            self.t[i * self.width + self.ncols] += eps;
        }
    }

    fn run(mut self, lp: &LinearProgram, opts: SimplexOptions) -> Result<LpSolution, LpError> {
        let limit = opts.max_pivots.unwrap_or(50 * (self.m + self.ncols) + 1000);
        let mut pivots = 0;
        self.perturb(opts.perturbation);
        if self.first_art < self.ncols {
            // phase one: maximise -sum(artificials)
            let mut cost = vec![0.0; self.ncols];
            for c in cost.iter_mut().skip(self.first_art) {
                *c = -1.0;
            }
            self.price(&cost);
            self.iterate(self.ncols, &cost, &opts, &mut pivots, limit)?;
            self.reinvert(&cost);
            let residual: f64 = (0..self.m)
                .filter(|&i| self.basis[i] >= self.first_art)
                .map(|i| self.rhs(i))
                .sum();
            let scale = 1.0 + self.b.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if residual > (opts.tol.max(1e-9) + 2.0 * opts.perturbation * self.m as f64) * scale {
                return Err(LpError::Infeasible(residual));
            }
            // drive remaining artificials out of the basis
            for i in 0..self.m {
                if self.basis[i] < self.first_art {
                    continue;
                }
                let w = self.width;
                let row = &self.t[i * w..i * w + self.first_art];
                let mut best = None;
                let mut mag = 1e-7;
                for (j, &v) in row.iter().enumerate() {
                    if v.abs() > mag {
                        mag = v.abs();
                        best = Some(j);
                    }
                }
                match best {
                    Some(j) => self.pivot(i, j),
                    None => self.active_rows[i] = false,
                }
            }
        }

        let mut cost = vec![0.0; self.ncols];
        for (c, &(var, sign)) in self.col_var.iter().enumerate() {
            cost[c] = sign * lp.objective[var];
        }
        self.price(&cost);
        self.iterate(self.first_art, &cost, &opts, &mut pivots, limit)?;

        let mut col_value = vec![0.0; self.ncols];
        for i in 0..self.m {
            if self.active_rows[i] {
                col_value[self.basis[i]] = self.rhs(i).max(0.0);
            }
        }
        let duals = self.refine(&mut col_value, &cost);

        let mut x = vec![0.0; lp.kinds.len()];
        for c in 0..self.n_struct {
            let (var, sign) = self.col_var[c];
            x[var] += sign * col_value[c];
        }
        Ok(LpSolution {
            value: lp.objective_value(&x),
            x,
            duals,
            pivots,
        })
    }

    /// Re-solves `B v_B = b` with the original columns and returns the
    /// row multipliers from `B^T y = c_B`.
    fn refine(&self, col_value: &mut [f64], cost: &[f64]) -> Vec<f64> {
        let rows: Vec<usize> = (0..self.m).filter(|&i| self.active_rows[i]).collect();
        let k = rows.len();
        if k > 3000 || rows.iter().any(|&i| self.basis[i] >= self.first_art) {
            return Vec::new();
        }
        if k == 0 {
            return vec![0.0; self.m];
        }
        let nc = self.ncols;
        let bmat = DMatrix::from_fn(k, k, |r, c| self.a[rows[r] * nc + self.basis[rows[c]]]);
        let lu = bmat.clone().lu();
        let rhs = DVector::from_iterator(k, rows.iter().map(|&i| self.b[i]));
        if let Some(sol) = lu.solve(&rhs) {
            if sol.iter().all(|v| v.is_finite() && *v >= -1e-7) {
                for (c, &i) in rows.iter().enumerate() {
                    col_value[self.basis[i]] = sol[c].max(0.0);
                }
            }
        }
        let cb = DVector::from_iterator(k, rows.iter().map(|&i| cost[self.basis[i]]));
        let Some(pi) = bmat.transpose().lu().solve(&cb) else {
            return Vec::new();
        };
        let mut duals = vec![0.0; self.m];
        for (r, &i) in rows.iter().enumerate() {
            duals[i] = self.row_sign[i] * pi[r];
        }
        duals
    }
}
