use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{
    check_feasibility, evaluate_objective, solve_power_flow_from, Dispatch, DistFlowMatrices,
    NetworkData, PowerFlowOptions, Scenario, SystemState,
};
use crate::surrogate::reduced_vjp;

/// Euclidean projection of `(p, q)` onto `{0 <= p <= p_max, p^2 + q^2 <= s^2}`.
pub fn project_box_disk(p: f64, q: f64, p_max: f64, s: f64) -> (f64, f64) {
    let p_hi = p_max.min(s).max(0.0);
    let in_strip = |p: f64| (0.0..=p_hi).contains(&p);
    let in_disk = |p: f64, q: f64| p * p + q * q <= s * s;
    if in_strip(p) && in_disk(p, q) {
        return (p, q);
    }
    let r = p.hypot(q);
    if !in_disk(p, q) && r > 0.0 {
        let (dp, dq) = (p * s / r, q * s / r);
        if in_strip(dp) {
            return (dp, dq);
        }
    }
    let cp = p.clamp(0.0, p_hi);
    if in_disk(cp, q) {
        return (cp, q);
    }
    // both boundaries active: a corner of the strip on the circle
    let corner = |b: f64| (b, q.signum() * (s * s - b * b).max(0.0).sqrt());
    let (a, b) = (corner(0.0), corner(p_hi));
    let d = |c: (f64, f64)| (c.0 - p).powi(2) + (c.1 - q).powi(2);
    if d(a) <= d(b) {
        a
    } else {
        b
    }
}

/// Projects every inverter's `(P, Q)` onto its availability box and disk.
pub fn project_dispatch(net: &NetworkData, x: &Scenario, d: &Dispatch) -> Dispatch {
    let k = net.pv_count();
    let mut out = d.clone();
    for (i, &b) in net.pv_buses().iter().enumerate() {
        let (p, q) = project_box_disk(d.0[i], d.0[k + i], x.pv_avail()[b], net.inv_cap[b]);
        out.0[i] = p;
        out.0[k + i] = q;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Number of starts, at least five.
    pub starts: usize,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Largest constraint violation accepted for a label.
    pub feasibility_tol: f64,
    /// Stationarity threshold on the projected-gradient step.
    pub step_tol: f64,
    pub seed: u64,
    /// Budget of the screening pass every start gets before the most
    /// promising one is run to convergence.
    pub screen_inner: usize,
    pub screen_outer: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            starts: 5,
            max_outer: 12,
            max_inner: 150,
            feasibility_tol: 1e-8,
            step_tol: 1e-9,
            seed: 0,
            screen_inner: 20,
            screen_outer: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub dispatch: Dispatch,
    pub objective: f64,
    /// Power-flow evaluations spent over all starts.
    pub evaluations: usize,
}

/// Augmented Lagrangian of the limit constraints.
struct Problem<'a> {
    net: &'a NetworkData,
    mat: &'a DistFlowMatrices,
    x: &'a Scenario,
    /// Minimize the squared distance to this dispatch instead of the cost.
    target: Option<&'a Dispatch>,
    lam_hi: Vec<f64>,
    lam_lo: Vec<f64>,
    lam_l: Vec<f64>,
    rho: f64,
    evaluations: usize,
    /// Whether the last inner solve met the stationarity threshold.
    stationary: bool,
}

struct Point {
    f: Dispatch,
    state: SystemState,
    value: f64,
}

impl<'a> Problem<'a> {
    fn new(net: &'a NetworkData, mat: &'a DistFlowMatrices, x: &'a Scenario) -> Self {
        let n = net.n();
        Self {
            net,
            mat,
            x,
            target: None,
            lam_hi: vec![0.0; n],
            lam_lo: vec![0.0; n],
            lam_l: vec![0.0; n],
            rho: 1.0,
            evaluations: 0,
            stationary: false,
        }
    }

    /// Outer multiplier loop; continues from the current multipliers.
    fn solve(&mut self, mut pt: Point, cfg: &OracleConfig) -> Point {
        let mut prev_viol = f64::INFINITY;
        for _ in 0..cfg.max_outer {
            pt = self.minimize(pt, cfg);
            let viol = self.violation(&pt.state);
            if viol <= 0.1 * cfg.feasibility_tol && self.stationary {
                break;
            }
            self.update_multipliers(&pt.state);
            if viol > 0.25 * prev_viol {
                self.rho *= 10.0;
            }
            prev_viol = viol;
            pt.value = self.value(&pt.f, &pt.state);
        }
        pt
    }

    fn hinge(&self, lam: f64, g: f64) -> f64 {
        let t = (lam + self.rho * g).max(0.0);
        (t * t - lam * lam) / (2.0 * self.rho)
    }

    fn value(&self, f: &Dispatch, st: &SystemState) -> f64 {
        let net = self.net;
        let mut v = match self.target {
            Some(t) => f.distance(t).powi(2),
            None => evaluate_objective(net, self.x, st, f),
        };
        for b in 0..net.n() {
            let vb = st.v[b + 1];
            v += self.hinge(self.lam_hi[b], vb - net.v_max);
            v += self.hinge(self.lam_lo[b], net.v_min - vb);
            v += self.hinge(self.lam_l[b], st.l[b] - net.l_max[b]);
        }
        v
    }

    fn eval(&mut self, f: Dispatch, warm: Option<&SystemState>) -> Option<Point> {
        self.evaluations += 1;
        let state =
            solve_power_flow_from(self.net, self.x, &f, warm, PowerFlowOptions::default()).ok()?;
        let value = self.value(&f, &state);
        value.is_finite().then_some(Point { f, state, value })
    }

    fn grad(&self, pt: &Point) -> Option<Vec<f64>> {
        let net = self.net;
        let n = net.n();
        let mut g_v = vec![0.0; n];
        let mut g_l = match self.target {
            Some(_) => vec![0.0; n],
            None => net.r.clone(),
        };
        for b in 0..n {
            let vb = pt.state.v[b + 1];
            g_v[b] += (self.lam_hi[b] + self.rho * (vb - net.v_max)).max(0.0);
            g_v[b] -= (self.lam_lo[b] + self.rho * (net.v_min - vb)).max(0.0);
            g_l[b] += (self.lam_l[b] + self.rho * (pt.state.l[b] - net.l_max[b])).max(0.0);
        }
        let mut g = reduced_vjp(net, self.mat, &pt.state, &g_v, &g_l).ok()?;
        match self.target {
            Some(t) => g
                .iter_mut()
                .zip(pt.f.0.iter().zip(&t.0))
                .for_each(|(g, (f, t))| *g += 2.0 * (f - t)),
            // curtailment term
            None => g.iter_mut().take(net.pv_count()).for_each(|g| *g -= 1.0),
        }
        Some(g)
    }

    fn violation(&self, st: &SystemState) -> f64 {
        let net = self.net;
        let mut worst: f64 = 0.0;
        for b in 0..net.n() {
            let vb = st.v[b + 1];
            worst = worst
                .max(vb - net.v_max)
                .max(net.v_min - vb)
                .max(st.l[b] - net.l_max[b]);
        }
        worst
    }

    fn update_multipliers(&mut self, st: &SystemState) {
        let net = self.net;
        for b in 0..net.n() {
            let vb = st.v[b + 1];
            self.lam_hi[b] = (self.lam_hi[b] + self.rho * (vb - net.v_max)).max(0.0);
            self.lam_lo[b] = (self.lam_lo[b] + self.rho * (net.v_min - vb)).max(0.0);
            self.lam_l[b] = (self.lam_l[b] + self.rho * (st.l[b] - net.l_max[b])).max(0.0);
        }
    }

    /// Projected gradient with Barzilai-Borwein steps and Armijo backtracking.
    fn minimize(&mut self, mut pt: Point, cfg: &OracleConfig) -> Point {
        self.stationary = false;
        let Some(mut g) = self.grad(&pt) else {
            return pt;
        };
        let mut alpha = 1e-2;
        for _ in 0..cfg.max_inner {
            let mut accepted = None;
            for _ in 0..40 {
                let trial: Vec<f64> = pt.f.0.iter().zip(&g).map(|(f, g)| f - alpha * g).collect();
                let trial = project_dispatch(self.net, self.x, &Dispatch(trial));
                let step2: f64 = trial
                    .0
                    .iter()
                    .zip(&pt.f.0)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if step2 == 0.0 {
                    self.stationary = true;
                    return pt;
                }
                if let Some(next) = self.eval(trial, Some(&pt.state)) {
                    if next.value <= pt.value - 1e-4 * step2 / alpha {
                        accepted = Some((next, step2));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some((next, step2)) = accepted else {
                return pt;
            };
            let Some(g_next) = self.grad(&next) else {
                return next;
            };
            let (mut sy, mut ss) = (0.0, 0.0);
            for i in 0..g.len() {
                let s = next.f.0[i] - pt.f.0[i];
                sy += s * (g_next[i] - g[i]);
                ss += s * s;
            }
            let converged = step2.sqrt() / alpha < cfg.step_tol;
            alpha = if sy > 0.0 {
                (ss / sy).clamp(1e-8, 1e4)
            } else {
                (alpha * 4.0).min(1e4)
            };
            pt = next;
            g = g_next;
            if converged {
                self.stationary = true;
                break;
            }
        }
        pt
    }
}

/// Locally optimal dispatch for scenario `x`: losses plus curtailment under
/// voltage, current, availability and inverter limits. Runs projected
/// gradient from several starts (zero curtailment, the supplied `extra`
/// starts, then fixed and random ones) on an augmented Lagrangian of the
/// limits and keeps the best start that ends feasible.
pub fn label_oracle(
    net: &NetworkData,
    mat: &DistFlowMatrices,
    x: &Scenario,
    extra: &[Dispatch],
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    if x.0.len() != net.scenario_dim() {
        return Err(Error::Dimension {
            what: "scenario",
            expected: net.scenario_dim(),
            got: x.0.len(),
        });
    }
    let k = net.pv_count();
    let mut starts = vec![Dispatch::zero_curtailment(net, x)];
    starts.extend(extra.iter().cloned());
    let half = Dispatch(
        net.pv_buses()
            .iter()
            .map(|&b| 0.5 * x.pv_avail()[b])
            .chain(std::iter::repeat_n(0.0, k))
            .collect(),
    );
    starts.push(half);
    let absorb = Dispatch(
        net.pv_buses()
            .iter()
            .map(|&b| x.pv_avail()[b])
            .chain(net.pv_buses().iter().map(|&b| -0.5 * net.inv_cap[b]))
            .collect(),
    );
    starts.push(absorb);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    while starts.len() < cfg.starts.max(5) {
        let mut d: Vec<f64> = net
            .pv_buses()
            .iter()
            .map(|&b| rng.random::<f64>() * x.pv_avail()[b])
            .collect();
        d.extend(
            net.pv_buses()
                .iter()
                .map(|&b| (2.0 * rng.random::<f64>() - 1.0) * net.inv_cap[b]),
        );
        let d = Dispatch(d);
        starts.push(d);
    }

    // screen every start on a short budget, then finish the best one
    let screen = OracleConfig {
        max_inner: cfg.screen_inner,
        max_outer: cfg.screen_outer,
        ..cfg.clone()
    };
    let mut evaluations = 0;
    let mut ranked: Vec<(Problem, Point)> = Vec::new();
    for start in starts {
        let mut prob = Problem::new(net, mat, x);
        let Some(pt) = prob.eval(project_dispatch(net, x, &start), None) else {
            evaluations += prob.evaluations;
            continue;
        };
        let pt = prob.solve(pt, &screen);
        ranked.push((prob, pt));
    }
    // rank by objective plus a large weight on the remaining violation
    let score = |p: &Problem, pt: &Point| {
        evaluate_objective(net, x, &pt.state, &pt.f) + 1e3 * p.violation(&pt.state)
    };
    ranked.sort_by(|a, b| score(&a.0, &a.1).total_cmp(&score(&b.0, &b.1)));
    // finish starts in rank order until one ends feasible; screened
    // starts that are already feasible stay in the running
    let mut best: Option<(Dispatch, f64)> = None;
    let mut finished = false;
    for (mut prob, pt) in ranked {
        let pt = if finished { pt } else { prob.solve(pt, cfg) };
        evaluations += prob.evaluations;
        let report = check_feasibility(net, x, &pt.f, cfg.feasibility_tol)?;
        if !report.feasible {
            continue;
        }
        finished = true;
        let obj = evaluate_objective(net, x, report.state.as_ref().expect("converged"), &pt.f);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((pt.f, obj));
        }
    }
    let (dispatch, objective) = best.ok_or(Error::Oracle)?;
    Ok(OracleResult {
        dispatch,
        objective,
        evaluations,
    })
}

/// Solver-based restoration used as a timing baseline: nearest feasible
/// dispatch to `f` found by the same projected-gradient machinery, started
/// from `f` itself. Returns the dispatch and its squared distance to `f`.
pub fn solver_projection(
    net: &NetworkData,
    mat: &DistFlowMatrices,
    x: &Scenario,
    f: &Dispatch,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    let mut prob = Problem::new(net, mat, x);
    prob.target = Some(f);
    let start = project_dispatch(net, x, f);
    let pt = prob.eval(start, None).ok_or(Error::Oracle)?;
    let pt = prob.solve(pt, cfg);
    if !check_feasibility(net, x, &pt.f, cfg.feasibility_tol)?.feasible {
        return Err(Error::Oracle);
    }
    let objective = pt.f.distance(f).powi(2);
    Ok(OracleResult {
        dispatch: pt.f,
        objective,
        evaluations: prob.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_matrices, feeder_33, solve_power_flow, two_bus};

    #[test]
    fn projection_is_nearest_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let p_max = rng.random::<f64>() * 1.5;
            let s = rng.random::<f64>();
            let (p, q) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let (pp, pq) = project_box_disk(p, q, p_max, s);
            assert!(
                pp >= 0.0
                    && pp <= p_max + 1e-15
                    && pp * pp + pq * pq <= s * s * (1.0 + 1e-12) + 1e-15
            );
            let d = (pp - p).hypot(pq - q);
            // dense polar sampling of the feasible set
            for i in 0..200 {
                for j in 0..=20 {
                    let th = std::f64::consts::PI * (i as f64 / 100.0 - 1.0);
                    let r = s * j as f64 / 20.0;
                    let (cp, cq) = (r * th.cos(), r * th.sin());
                    if cp >= 0.0 && cp <= p_max {
                        assert!((cp - p).hypot(cq - q) >= d - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn unloaded_lossless_network_takes_all_pv() {
        let net = two_bus(0.0, 0.0);
        let mat = build_matrices(&net);
        let x = Scenario::from_parts(&[0.0], &[0.0], &[0.1]);
        let res = label_oracle(&net, &mat, &x, &[], &OracleConfig::default()).unwrap();
        assert!((res.dispatch.p()[0] - 0.1).abs() < 1e-9);
        assert!(res.objective.abs() < 1e-9);
    }

    #[test]
    fn two_bus_matches_grid_search() {
        let net = two_bus(0.1, 0.08);
        let mat = build_matrices(&net);
        let x = Scenario::from_parts(&[0.05], &[0.02], &[0.9]);
        let res = label_oracle(&net, &mat, &x, &[], &OracleConfig::default()).unwrap();
        let s = net.inv_cap[0];
        let mut best = f64::INFINITY;
        let steps = (s / 1e-3).round() as i64;
        for i in 0..=((x.pv_avail()[0].min(s) / 1e-3) as i64) {
            for j in -steps..=steps {
                let d = Dispatch(vec![i as f64 * 1e-3, j as f64 * 1e-3]);
                if d.0[0].hypot(d.0[1]) > s {
                    continue;
                }
                let r = check_feasibility(&net, &x, &d, 0.0).unwrap();
                if r.feasible {
                    let st = solve_power_flow(&net, &x, &d).unwrap();
                    best = best.min(evaluate_objective(&net, &x, &st, &d));
                }
            }
        }
        assert!(best.is_finite());
        assert!(
            res.objective <= best + 1e-4,
            "oracle {} grid {best}",
            res.objective
        );
        assert!(res.objective >= best - 1e-2);
    }

    #[test]
    fn solver_projection_restores_feasibility() {
        let net = feeder_33();
        let mat = build_matrices(&net);
        let mut x = net.nominal_scenario();
        let n = net.n();
        for b in 0..n {
            x.0[b] *= 0.2;
            x.0[2 * n + b] *= 3.0;
        }
        let f = project_dispatch(&net, &x, &Dispatch::zero_curtailment(&net, &x));
        assert!(!check_feasibility(&net, &x, &f, 1e-6).unwrap().feasible);
        let res = solver_projection(&net, &mat, &x, &f, &OracleConfig::default()).unwrap();
        assert!(
            check_feasibility(&net, &x, &res.dispatch, 1e-6)
                .unwrap()
                .feasible
        );
        assert!(res.objective > 0.0);
    }

    #[test]
    fn nominal_33_label_is_feasible() {
        let net = feeder_33();
        let mat = build_matrices(&net);
        let x = net.nominal_scenario();
        let res = label_oracle(&net, &mat, &x, &[], &OracleConfig::default()).unwrap();
        assert!(
            check_feasibility(&net, &x, &res.dispatch, 1e-6)
                .unwrap()
                .feasible
        );
        let zc = Dispatch::zero_curtailment(&net, &x);
        let st = solve_power_flow(&net, &x, &zc).unwrap();
        eprintln!(
            "oracle {:.6} evals {} zero-curtailment {:.6}",
            res.objective,
            res.evaluations,
            evaluate_objective(&net, &x, &st, &zc)
        );
    }
}
