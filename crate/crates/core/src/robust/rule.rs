use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    dualize_linear_row, one_norm_soc_rows, GammaAffine, RobustExpr, RobustRow, ScenarioBox,
};
use crate::error::{Error, Result};
use crate::inner::{AffineExpr, InnerSystem, Layout};
use crate::lp::{LinearProgram, Relation, VarKind};
use crate::network::{Dispatch, NetworkData, Scenario};

const ARTIFACT_VERSION: u32 = 1;

/// Which scenario entries each rule row may depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RuleStructure {
    /// Every row of `W` is free. Only practical for small feeders.
    Full,
    /// PV setpoints of a bus depend on that bus's own load and availability;
    /// the current envelope is constant.
    #[default]
    Nodal,
}

/// How the robust LP is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FitMethod {
    /// Cutting planes at worst-case box vertices. Every robust row is the
    /// maximum of finitely many affine functions of the rule coefficients
    /// (one per vertex), so adding the vertex that is worst for the current
    /// coefficients until none is violated reaches the same optimum as the
    /// dualized LP. The master LP has one row per coefficient and is solved
    /// through its dual, which stays small.
    #[default]
    VertexCuts,
    /// All rows dualized into one LP. Exact but only practical for small
    /// feeders; kept as an independent route.
    Dualized,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub structure: RuleStructure,
    pub method: FitMethod,
    /// Cone blocks up to this length are tightened by sign enumeration.
    pub enumerate_max: usize,
    /// Upper bound placed on the slack so the LP stays bounded.
    pub slack_cap: f64,
    /// Bound on the magnitude of every rule coefficient (cutting planes only).
    pub coef_bound: f64,
    pub max_rounds: usize,
    /// Violation above which a row gets a new cut.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            structure: RuleStructure::Nodal,
            method: FitMethod::VertexCuts,
            enumerate_max: 3,
            slack_cap: 1.0,
            coef_bound: 1e3,
            max_rounds: 500,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub rounds: usize,
    pub robust_rows: usize,
    /// Vertex cuts in the final master LP (cutting planes only).
    pub cuts: usize,
    pub lp_rows: usize,
    pub lp_vars: usize,
    pub pivots: usize,
}

/// Fitted rule `y(x) = W x + w` with its certified slack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineRule {
    pub version: u32,
    pub dim_y: usize,
    pub dim_x: usize,
    /// Leading rows of `W` that produce the dispatch.
    pub dim_f: usize,
    pub structure: RuleStructure,
    /// Row-major `dim_y x dim_x`.
    pub w_matrix: Vec<f64>,
    pub w_offset: Vec<f64>,
    pub slack: f64,
    pub scenario_box: ScenarioBox,
    pub fingerprint: String,
    /// Largest robust-row violation of the returned coefficients.
    pub certificate_residual: f64,
    pub stats: FitStats,
}

/// Interior point for one scenario. `in_box` is false when the scenario lies
/// outside the fitted box, where the certificate does not apply.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorPoint {
    pub dispatch: Dispatch,
    pub in_box: bool,
}

struct RuleParams {
    /// Per decision row: (scenario column, LP variable).
    slopes: Vec<Vec<(usize, usize)>>,
    offset: Vec<usize>,
    count: usize,
}

impl RuleParams {
    fn new(lay: &Layout, structure: RuleStructure) -> Self {
        let mut next = 0;
        let mut slopes = Vec::with_capacity(lay.dim_y());
        let mut offset = Vec::with_capacity(lay.dim_y());
        let mut alloc = |cols: Vec<usize>| -> Vec<(usize, usize)> {
            cols.into_iter()
                .map(|c| {
                    next += 1;
                    (c, next - 1)
                })
                .collect()
        };
        for r in 0..lay.dim_y() {
            let cols = match structure {
                RuleStructure::Full => (0..lay.dim_x()).collect(),
                RuleStructure::Nodal if r < lay.dim_f() => {
                    let m = lay.pv_buses[r % lay.k()];
                    vec![lay.x_pl(m), lay.x_ql(m), lay.x_pbar(m)]
                }
                RuleStructure::Nodal => Vec::new(),
            };
            slopes.push(alloc(cols));
        }
        for _ in 0..lay.dim_y() {
            offset.push(next);
            next += 1;
        }
        RuleParams {
            slopes,
            offset,
            count: next,
        }
    }

    fn substitute(&self, e: &AffineExpr) -> RobustExpr {
        let mut out = RobustExpr {
            a: e.x.iter().map(|&v| GammaAffine::constant(v)).collect(),
            b: GammaAffine::constant(e.c),
        };
        for (r, &ey) in e.y.iter().enumerate() {
            if ey == 0.0 {
                continue;
            }
            for &(c, v) in &self.slopes[r] {
                out.a[c].add_term(v, ey);
            }
            out.b.add_term(self.offset[r], ey);
        }
        out
    }
}

/// `coefs . v + slack * s <= rhs` over the rule coefficients `v`.
#[derive(Debug, Clone)]
struct Cut {
    coefs: Vec<(usize, f64)>,
    slack: f64,
    rhs: f64,
}

/// The affine piece of a robust row that is active at `vals`, plus the
/// signs that identify it.
fn vertex_cut(row: &RobustRow, vals: &[f64], bx: &ScenarioBox) -> (Vec<bool>, Cut) {
    let mut pattern = Vec::new();
    let mut g = row.expr.b.clone();
    for (c, a) in row.expr.a.iter().enumerate() {
        if a.terms.is_empty() && a.c == 0.0 {
            continue;
        }
        let ac = a.eval(vals);
        let upper = (ac * bx.upper[c]) >= (ac * bx.lower[c]);
        if !a.is_constant() {
            pattern.push(upper);
        }
        g.axpy(if upper { bx.upper[c] } else { bx.lower[c] }, a);
    }
    let slack = if row.with_slack { 1.0 } else { 0.0 };
    (
        pattern,
        Cut {
            coefs: g.terms,
            slack,
            rhs: -g.c,
        },
    )
}

/// Solves `max s` over the cuts through the dual LP and returns the primal
/// point `(v, s)` recovered from its row multipliers.
fn solve_master(
    cuts: &[Cut],
    n_coef: usize,
    cap: f64,
    stats: &mut FitStats,
) -> Result<(Vec<f64>, f64)> {
    let mut lp = LinearProgram::new();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_coef + 1];
    for cut in cuts {
        let mu = lp.add_var(VarKind::NonNegative, -cut.rhs);
        for &(v, g) in &cut.coefs {
            rows[v].push((mu, g));
        }
        if cut.slack != 0.0 {
            rows[n_coef].push((mu, cut.slack));
        }
    }
    let nu = lp.add_var(VarKind::NonNegative, -cap);
    rows[n_coef].push((nu, 1.0));
    for (j, row) in rows.into_iter().enumerate() {
        lp.add_row(row, Relation::Eq, if j == n_coef { 1.0 } else { 0.0 });
    }
    let sol = lp.solve()?;
    stats.pivots += sol.pivots;
    stats.lp_rows = lp.num_rows();
    stats.lp_vars = lp.num_vars();
    if sol.duals.len() != n_coef + 1 {
        return Err(Error::Input(
            "robust master basis could not be refactored".into(),
        ));
    }
    let v: Vec<f64> = sol.duals[..n_coef].iter().map(|y| -y).collect();
    Ok((v, -sol.duals[n_coef]))
}

/// Maximises the uniform slack `s` such that `y(x)` meets every inner row
/// with margin `s` for all scenarios in the box.
///
/// The returned slack is the LP optimum less any residual violation left by
/// round-off, so every row holds with margin `slack` at the returned
/// coefficients.
pub fn fit_affine_rule(
    sys: &InnerSystem,
    bx: &ScenarioBox,
    fingerprint: &str,
    opts: &FitOptions,
) -> Result<AffineRule> {
    let lay = &sys.layout;
    if bx.dim() != lay.dim_x() {
        return Err(Error::Dimension {
            what: "scenario box",
            expected: lay.dim_x(),
            got: bx.dim(),
        });
    }
    let params = RuleParams::new(lay, opts.structure);
    let mut next_var = params.count;
    let mut rows: Vec<RobustRow> = Vec::new();
    let mut nonneg = Vec::new();
    for r in &sys.rows {
        rows.push(RobustRow {
            expr: params.substitute(&r.expr),
            with_slack: true,
        });
    }
    for b in &sys.blocks {
        let soc = super::RobustSoc {
            vector: b.vector.iter().map(|e| params.substitute(e)).collect(),
            bound: params.substitute(&b.bound),
        };
        let (generated, taus) = one_norm_soc_rows(&soc, opts.enumerate_max, &mut next_var);
        nonneg.extend(taus);
        rows.extend(generated);
    }
    let n_coef = next_var;
    let mut stats = FitStats {
        robust_rows: rows.len(),
        ..Default::default()
    };

    let (vals, lp_slack) = match opts.method {
        FitMethod::Dualized => {
            stats.rounds = 1;
            let mut lp = LinearProgram::new();
            for v in 0..n_coef {
                let kind = if nonneg.contains(&v) {
                    VarKind::NonNegative
                } else {
                    VarKind::Free
                };
                lp.add_var(kind, 0.0);
            }
            let s = lp.add_var(VarKind::Free, 1.0);
            lp.add_row([(s, 1.0)], Relation::Le, opts.slack_cap);
            for r in &rows {
                dualize_linear_row(r, bx, s, &mut lp)?;
            }
            let sol = lp.solve()?;
            stats.pivots = sol.pivots;
            stats.lp_rows = lp.num_rows();
            stats.lp_vars = lp.num_vars();
            (sol.x[..n_coef].to_vec(), sol.x[s])
        }
        FitMethod::VertexCuts => {
            let mut cuts = Vec::new();
            for v in 0..n_coef {
                let lo = if nonneg.contains(&v) {
                    0.0
                } else {
                    opts.coef_bound
                };
                cuts.push(Cut {
                    coefs: vec![(v, 1.0)],
                    slack: 0.0,
                    rhs: opts.coef_bound,
                });
                cuts.push(Cut {
                    coefs: vec![(v, -1.0)],
                    slack: 0.0,
                    rhs: lo,
                });
            }
            let mut seen = std::collections::HashSet::new();
            let mut vals = vec![0.0; n_coef];
            let mut slack = 0.0;
            loop {
                let first = stats.rounds == 0;
                let mut added = 0;
                for (i, r) in rows.iter().enumerate() {
                    if !first && r.worst_case(&vals, slack, bx) <= opts.tol {
                        continue;
                    }
                    let (pattern, cut) = vertex_cut(r, &vals, bx);
                    if seen.insert((i, pattern)) {
                        cuts.push(cut);
                        added += 1;
                    }
                }
                if !first && added == 0 {
                    // violations left are round-off on rows already cut
                    break;
                }
                stats.rounds += 1;
                (vals, slack) = solve_master(&cuts, n_coef, opts.slack_cap, &mut stats)?;
                log::debug!(
                    "robust fit round {}: slack {slack:.6e}, {added} cuts added",
                    stats.rounds
                );
                if rows
                    .iter()
                    .all(|r| r.worst_case(&vals, slack, bx) <= opts.tol)
                {
                    break;
                }
                if stats.rounds >= opts.max_rounds {
                    return Err(Error::Input(format!(
                        "robust fit did not settle in {} rounds",
                        opts.max_rounds
                    )));
                }
            }
            stats.cuts = cuts.len();
            (vals, slack)
        }
    };

    // margin actually achieved by the returned coefficients
    let worst = rows
        .iter()
        .map(|r| r.worst_case(&vals, lp_slack, bx))
        .fold(f64::NEG_INFINITY, f64::max);
    let slack = lp_slack - worst.max(0.0);
    if !(slack > 0.0) {
        return Err(Error::NoInteriorRule { slack });
    }

    let mut w_matrix = vec![0.0; lay.dim_y() * lay.dim_x()];
    for (r, sl) in params.slopes.iter().enumerate() {
        for &(c, v) in sl {
            w_matrix[r * lay.dim_x() + c] = vals[v];
        }
    }
    let w_offset = params.offset.iter().map(|&v| vals[v]).collect();
    Ok(AffineRule {
        version: ARTIFACT_VERSION,
        dim_y: lay.dim_y(),
        dim_x: lay.dim_x(),
        dim_f: lay.dim_f(),
        structure: opts.structure,
        w_matrix,
        w_offset,
        slack,
        scenario_box: bx.clone(),
        fingerprint: fingerprint.to_string(),
        certificate_residual: worst,
        stats,
    })
}

impl AffineRule {
    fn rows_times(&self, rows: usize, x: &[f64]) -> Vec<f64> {
        (0..rows)
            .map(|r| {
                let row = &self.w_matrix[r * self.dim_x..(r + 1) * self.dim_x];
                row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.w_offset[r]
            })
            .collect()
    }

    /// Full decision vector (dispatch and envelope) at `x`.
    pub fn eval_full(&self, x: &Scenario) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.rows_times(self.dim_y, x.as_slice()))
    }

    fn check_dim(&self, x: &Scenario) -> Result<()> {
        if x.as_slice().len() != self.dim_x {
            return Err(Error::Dimension {
                what: "scenario",
                expected: self.dim_x,
                got: x.as_slice().len(),
            });
        }
        Ok(())
    }

    pub fn verify_network(&self, net: &NetworkData) -> Result<()> {
        let actual = net.fingerprint();
        if actual != self.fingerprint {
            return Err(Error::Fingerprint {
                expected: self.fingerprint.clone(),
                actual,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rule: AffineRule = serde_json::from_str(s)?;
        if rule.version != ARTIFACT_VERSION {
            return Err(Error::Version(rule.version));
        }
        if rule.w_matrix.len() != rule.dim_y * rule.dim_x || rule.w_offset.len() != rule.dim_y {
            return Err(Error::Input(
                "rule artifact has inconsistent dimensions".into(),
            ));
        }
        Ok(rule)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Loads an artifact and checks it was fitted for `net`.
    pub fn load(path: impl AsRef<Path>, net: &NetworkData) -> Result<Self> {
        let rule = Self::from_json(&std::fs::read_to_string(path)?)?;
        rule.verify_network(net)?;
        Ok(rule)
    }
}

/// Dispatch part of the rule at `x`; one small matrix-vector product.
pub fn eval_interior_point(rule: &AffineRule, x: &Scenario) -> Result<InteriorPoint> {
    rule.check_dim(x)?;
    let in_box = rule.scenario_box.contains(x.as_slice(), 1e-12);
    if !in_box {
        log::warn!("scenario outside the certified box; interior point is not guaranteed");
    }
    Ok(InteriorPoint {
        dispatch: Dispatch(rule.rows_times(rule.dim_f, x.as_slice())),
        in_box,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner::{assemble_inner_system, make_taylor_cuts, InnerOptions};
    use crate::network::{build_matrices, solve_power_flow, two_bus};

    fn two_bus_system() -> (NetworkData, InnerSystem) {
        let net = two_bus(0.05, 0.05);
        let x = net.nominal_scenario();
        let base = solve_power_flow(&net, &x, &Dispatch::zero_curtailment(&net, &x)).unwrap();
        let cuts = make_taylor_cuts(&net, &base).unwrap();
        let sys =
            assemble_inner_system(&net, &build_matrices(&net), &cuts, &InnerOptions::default())
                .unwrap();
        (net, sys)
    }

    #[test]
    fn both_routes_agree_on_two_bus() {
        let (net, sys) = two_bus_system();
        let bx = ScenarioBox::around(&net.nominal_scenario(), 0.25).unwrap();
        for structure in [RuleStructure::Full, RuleStructure::Nodal] {
            let cut = fit_affine_rule(
                &sys,
                &bx,
                "t",
                &FitOptions {
                    structure,
                    ..Default::default()
                },
            )
            .unwrap();
            let dual = fit_affine_rule(
                &sys,
                &bx,
                "t",
                &FitOptions {
                    structure,
                    method: FitMethod::Dualized,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(
                (cut.slack - dual.slack).abs() < 1e-8,
                "{} vs {}",
                cut.slack,
                dual.slack
            );
        }
    }
}
