//! Robust affine interior-point rule.
//!
//! The rule `y(x) = W x + w` is substituted into every inner-system row,
//! which turns each row into `a(γ)^T x + b(γ) + s <= 0` with `γ` the rule
//! coefficients. Requiring this for every `x` in a box is a linear condition
//! on `γ` after box duality:
//!
//! ```text
//! x̄^T λ+ - x_^T λ- + b(γ) + s <= 0,   λ+ - λ- = a(γ),   λ± >= 0
//! ```
//!
//! Cone blocks are tightened to the 1-norm first (`||u||_2 <= ||u||_1`) and
//! then dualized the same way.

mod certify;
mod rule;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Relation, VarKind};
use crate::network::Scenario;

pub use certify::{build_inner_system, certify, corner_currents, CertifyOptions};
pub use rule::{
    eval_interior_point, fit_affine_rule, AffineRule, FitMethod, FitOptions, FitStats,
    InteriorPoint, RuleStructure,
};

/// Componentwise scenario bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ScenarioBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                what: "scenario box",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::Input(format!(
                "box component {i}: lower {} above upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(ScenarioBox { lower, upper })
    }

    /// `[(1 - radius) x, (1 + radius) x]` componentwise.
    pub fn around(nominal: &Scenario, radius: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&radius) {
            return Err(Error::Input(format!(
                "box radius {radius} must lie in [0, 1)"
            )));
        }
        let lo = nominal
            .as_slice()
            .iter()
            .map(|v| v * (1.0 - radius))
            .collect::<Vec<_>>();
        let hi = nominal
            .as_slice()
            .iter()
            .map(|v| v * (1.0 + radius))
            .collect::<Vec<_>>();
        // negative nominal entries flip the ends
        let (lower, upper) = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| (a.min(*b), a.max(*b)))
            .unzip();
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Scenario {
        Scenario(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(&l, &u)| if u > l { rng.random_range(l..=u) } else { l })
                .collect(),
        )
    }

    /// Vertex selected by the low bits of `bits` (bit `i` set = upper end).
    pub fn vertex(&self, bits: &[bool]) -> Scenario {
        Scenario(
            (0..self.dim())
                .map(|i| {
                    if bits[i] {
                        self.upper[i]
                    } else {
                        self.lower[i]
                    }
                })
                .collect(),
        )
    }

    pub fn random_vertex<R: Rng + ?Sized>(&self, rng: &mut R) -> Scenario {
        let bits: Vec<bool> = (0..self.dim()).map(|_| rng.random_bool(0.5)).collect();
        self.vertex(&bits)
    }
}

/// Linear function of the LP variables: `Σ coef * v[var] + c`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GammaAffine {
    pub terms: Vec<(usize, f64)>,
    pub c: f64,
}

impl GammaAffine {
    pub fn constant(c: f64) -> Self {
        GammaAffine {
            terms: Vec::new(),
            c,
        }
    }

    pub fn var(v: usize, coef: f64) -> Self {
        GammaAffine {
            terms: vec![(v, coef)],
            c: 0.0,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.1 == 0.0)
    }

    pub fn add_term(&mut self, v: usize, coef: f64) {
        if coef == 0.0 {
            return;
        }
        match self.terms.iter_mut().find(|t| t.0 == v) {
            Some(t) => t.1 += coef,
            None => self.terms.push((v, coef)),
        }
    }

    pub fn axpy(&mut self, a: f64, other: &GammaAffine) {
        if a == 0.0 {
            return;
        }
        for &(v, c) in &other.terms {
            self.add_term(v, a * c);
        }
        self.c += a * other.c;
    }

    pub fn eval(&self, vals: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * vals[v]).sum::<f64>() + self.c
    }
}

/// `a(γ)^T x + b(γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustExpr {
    pub a: Vec<GammaAffine>,
    pub b: GammaAffine,
}

impl RobustExpr {
    pub fn zeros(dim_x: usize) -> Self {
        RobustExpr {
            a: vec![GammaAffine::default(); dim_x],
            b: GammaAffine::default(),
        }
    }

    pub fn axpy(&mut self, f: f64, other: &RobustExpr) {
        for (s, o) in self.a.iter_mut().zip(&other.a) {
            s.axpy(f, o);
        }
        self.b.axpy(f, &other.b);
    }

    /// Largest value over the box for fixed LP variable values.
    pub fn worst_case(&self, vals: &[f64], bx: &ScenarioBox) -> f64 {
        let mut v = self.b.eval(vals);
        for (c, a) in self.a.iter().enumerate() {
            if a.terms.is_empty() && a.c == 0.0 {
                continue;
            }
            let ac = a.eval(vals);
            v += (ac * bx.upper[c]).max(ac * bx.lower[c]);
        }
        v
    }
}

/// `expr (+ s) <= 0` for every `x` in the box.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustRow {
    pub expr: RobustExpr,
    pub with_slack: bool,
}

impl RobustRow {
    pub fn worst_case(&self, vals: &[f64], s: f64, bx: &ScenarioBox) -> f64 {
        self.expr.worst_case(vals, bx) + if self.with_slack { s } else { 0.0 }
    }
}

/// Cone block `||vector||_2 <= bound` with every entry affine in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustSoc {
    pub vector: Vec<RobustExpr>,
    pub bound: RobustExpr,
}

/// Emits the dual certificate of one robust row into `lp`.
///
/// Box components whose coefficient does not depend on the LP variables, or
/// whose interval is a single point, contribute a known worst case and get
/// no dual pair; every other component gets `λ+, λ- >= 0` tied to `a_c` by
/// an equality row.
pub fn dualize_linear_row(
    row: &RobustRow,
    bx: &ScenarioBox,
    slack: usize,
    lp: &mut LinearProgram,
) -> Result<()> {
    if row.expr.a.len() != bx.dim() {
        return Err(Error::Dimension {
            what: "robust row",
            expected: bx.dim(),
            got: row.expr.a.len(),
        });
    }
    let mut main: Vec<(usize, f64)> = row.expr.b.terms.clone();
    let mut constant = row.expr.b.c;
    if row.with_slack {
        main.push((slack, 1.0));
    }
    for (c, a) in row.expr.a.iter().enumerate() {
        let (lo, hi) = (bx.lower[c], bx.upper[c]);
        if a.is_constant() {
            constant += (a.c * hi).max(a.c * lo);
        } else if lo == hi {
            main.extend(a.terms.iter().map(|&(v, k)| (v, k * hi)));
            constant += a.c * hi;
        } else {
            let lp_pos = lp.add_var(VarKind::NonNegative, 0.0);
            let lp_neg = lp.add_var(VarKind::NonNegative, 0.0);
            // λ+ - λ- - a(γ) = a.c
            let eq = [(lp_pos, 1.0), (lp_neg, -1.0)]
                .into_iter()
                .chain(a.terms.iter().map(|&(v, k)| (v, -k)));
            lp.add_row(eq, Relation::Eq, a.c);
            main.push((lp_pos, hi));
            main.push((lp_neg, -lo));
        }
    }
    lp.add_row(main, Relation::Le, -constant);
    Ok(())
}

/// Robust rows implying `||u||_1 + s <= bound` on the box, hence the 2-norm
/// cone. Vectors of dimension up to `enumerate_max` use one row per sign
/// pattern, which is the exact robust counterpart of the 1-norm row. Longer
/// vectors use one epigraph variable per component, allocated from
/// `next_var`; the new variables are returned and must be non-negative.
pub fn one_norm_soc_rows(
    block: &RobustSoc,
    enumerate_max: usize,
    next_var: &mut usize,
) -> (Vec<RobustRow>, Vec<usize>) {
    let d = block.vector.len();
    let dim_x = block.bound.a.len();
    if d <= enumerate_max {
        let rows = (0..1usize << d)
            .map(|mask| {
                let mut e = RobustExpr::zeros(dim_x);
                for (i, u) in block.vector.iter().enumerate() {
                    e.axpy(if mask >> i & 1 == 1 { -1.0 } else { 1.0 }, u);
                }
                e.axpy(-1.0, &block.bound);
                RobustRow {
                    expr: e,
                    with_slack: true,
                }
            })
            .collect();
        return (rows, Vec::new());
    }
    let mut rows = Vec::with_capacity(2 * d + 1);
    let mut taus = Vec::with_capacity(d);
    let mut total = RobustExpr::zeros(dim_x);
    for u in &block.vector {
        let tau = *next_var;
        *next_var += 1;
        taus.push(tau);
        for sign in [1.0, -1.0] {
            let mut e = RobustExpr::zeros(dim_x);
            e.axpy(sign, u);
            e.b.add_term(tau, -1.0);
            rows.push(RobustRow {
                expr: e,
                with_slack: false,
            });
        }
        total.b.add_term(tau, 1.0);
    }
    total.axpy(-1.0, &block.bound);
    rows.push(RobustRow {
        expr: total,
        with_slack: true,
    });
    (rows, taus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_free_row_folds_to_constant() {
        // x1 <= 5 on x1 in [0, 1]
        let bx = ScenarioBox::new(vec![0.0], vec![1.0]).unwrap();
        let mut lp = LinearProgram::new();
        let s = lp.add_var(VarKind::Free, 1.0);
        let mut e = RobustExpr::zeros(1);
        e.a[0] = GammaAffine::constant(1.0);
        e.b = GammaAffine::constant(-5.0);
        dualize_linear_row(
            &RobustRow {
                expr: e,
                with_slack: true,
            },
            &bx,
            s,
            &mut lp,
        )
        .unwrap();
        assert!((lp.solve().unwrap().value - 4.0).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_cone_is_exact() {
        // |g| <= 1 - x on x in [0, 0.5]; best slack is 0.5 at g = 0
        let bx = ScenarioBox::new(vec![0.0], vec![0.5]).unwrap();
        let mut lp = LinearProgram::new();
        let g = lp.add_var(VarKind::Free, 0.0);
        let s = lp.add_var(VarKind::Free, 1.0);
        let mut u = RobustExpr::zeros(1);
        u.b = GammaAffine::var(g, 1.0);
        let mut c = RobustExpr::zeros(1);
        c.a[0] = GammaAffine::constant(-1.0);
        c.b = GammaAffine::constant(1.0);
        let mut next = 2;
        let (rows, taus) = one_norm_soc_rows(
            &RobustSoc {
                vector: vec![u],
                bound: c,
            },
            3,
            &mut next,
        );
        assert!(taus.is_empty());
        assert_eq!(rows.len(), 2);
        for r in &rows {
            dualize_linear_row(r, &bx, s, &mut lp).unwrap();
        }
        let sol = lp.solve().unwrap();
        assert!((sol.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn around_orders_negative_nominals() {
        let bx = ScenarioBox::around(&Scenario(vec![1.0, -2.0, 0.0]), 0.25).unwrap();
        assert_eq!(bx.lower, vec![0.75, -2.5, 0.0]);
        assert_eq!(bx.upper, vec![1.25, -1.5, 0.0]);
    }
}
