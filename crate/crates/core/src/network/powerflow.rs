use serde::{Deserialize, Serialize};

use super::{Dispatch, NetworkData, Scenario};
use crate::error::{Error, Result};

/// Converged DistFlow state. `v` covers every node (index 0 is the
/// substation, pinned at `V0`); `l`, `p`, `q` are per branch (bus index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub v: Vec<f64>,
    pub l: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub iterations: usize,
}

impl SystemState {
    /// Squared voltage at the sending end of branch `k`.
    pub fn sending_voltage(&self, net: &NetworkData, k: usize) -> f64 {
        self.v[net.parent(k + 1)]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PowerFlowOptions {
    /// Convergence threshold on the largest change of a squared voltage.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// Consumption-positive nodal injections `(p, q)` per bus.
pub fn injections(net: &NetworkData, x: &Scenario, d: &Dispatch) -> (Vec<f64>, Vec<f64>) {
    let mut p = x.p_load().to_vec();
    let mut q = x.q_load().to_vec();
    for (i, &k) in net.pv_buses().iter().enumerate() {
        p[k] -= d.p()[i];
        q[k] -= d.q()[i];
    }
    (p, q)
}

pub fn solve_power_flow(net: &NetworkData, x: &Scenario, d: &Dispatch) -> Result<SystemState> {
    solve_power_flow_from(net, x, d, None, PowerFlowOptions::default())
}

/// Backward/forward sweep. `warm` seeds the squared currents.
pub fn solve_power_flow_from(
    net: &NetworkData,
    x: &Scenario,
    d: &Dispatch,
    warm: Option<&SystemState>,
    opts: PowerFlowOptions,
) -> Result<SystemState> {
    if !d.is_finite() || !x.as_slice().iter().all(|v| v.is_finite()) {
        return Err(Error::Input("non-finite scenario or dispatch".into()));
    }
    let n = net.n();
    let (pin, qin) = injections(net, x, d);
    let mut l = match warm {
        Some(s) => s.l.clone(),
        None => vec![0.0; n],
    };
    let mut pf = vec![0.0; n];
    let mut qf = vec![0.0; n];
    let mut v = vec![net.v0; n + 1];
    let mut change = f64::INFINITY;

    for it in 1..=opts.max_iter {
        sweep(net, &pin, &qin, &l, &mut pf, &mut qf, &mut v, &mut change)?;
        for k in 0..n {
            l[k] = (pf[k] * pf[k] + qf[k] * qf[k]) / v[net.parent(k + 1)];
        }
        if change <= opts.tol {
            let mut last = 0.0;
            sweep(net, &pin, &qin, &l, &mut pf, &mut qf, &mut v, &mut last)?;
            return Ok(SystemState {
                v,
                l,
                p: pf,
                q: qf,
                iterations: it,
            });
        }
    }
    Err(Error::Divergence {
        iterations: opts.max_iter,
        last_change: change,
    })
}

/// One backward (flows) and forward (voltages) pass for fixed currents.
#[allow(clippy::too_many_arguments)]
fn sweep(
    net: &NetworkData,
    pin: &[f64],
    qin: &[f64],
    l: &[f64],
    pf: &mut [f64],
    qf: &mut [f64],
    v: &mut [f64],
    change: &mut f64,
) -> Result<()> {
    for &node in net.order().iter().rev() {
        let k = node - 1;
        let mut ps = pin[k] + net.r[k] * l[k];
        let mut qs = qin[k] + net.x[k] * l[k];
        for &ch in net.children(node) {
            ps += pf[ch - 1];
            qs += qf[ch - 1];
        }
        pf[k] = ps;
        qf[k] = qs;
    }
    let mut delta: f64 = 0.0;
    for &node in net.order() {
        let k = node - 1;
        let (r, x) = (net.r[k], net.x[k]);
        let up = v[net.parent(node)];
        let new = up - 2.0 * (r * pf[k] + x * qf[k]) + (r * r + x * x) * l[k];
        if !(new > 0.0) {
            return Err(Error::VoltageCollapse { node, value: new });
        }
        delta = delta.max((new - v[node]).abs());
        v[node] = new;
    }
    *change = delta;
    Ok(())
}

/// Largest absolute residual of each DistFlow equation family.
#[derive(Debug, Clone, Copy, Default)]
pub struct Residuals {
    pub p_balance: f64,
    pub q_balance: f64,
    pub voltage_drop: f64,
    pub current: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.p_balance
            .max(self.q_balance)
            .max(self.voltage_drop)
            .max(self.current)
    }
}

pub fn power_flow_residuals(
    net: &NetworkData,
    x: &Scenario,
    d: &Dispatch,
    s: &SystemState,
) -> Residuals {
    let (pin, qin) = injections(net, x, d);
    let mut res = Residuals::default();
    for &node in net.order() {
        let k = node - 1;
        let (r, xx) = (net.r[k], net.x[k]);
        let mut ps = pin[k] + r * s.l[k];
        let mut qs = qin[k] + xx * s.l[k];
        for &ch in net.children(node) {
            ps += s.p[ch - 1];
            qs += s.q[ch - 1];
        }
        let up = s.v[net.parent(node)];
        res.p_balance = res.p_balance.max((s.p[k] - ps).abs());
        res.q_balance = res.q_balance.max((s.q[k] - qs).abs());
        let drop = up - 2.0 * (r * s.p[k] + xx * s.q[k]) + (r * r + xx * xx) * s.l[k];
        res.voltage_drop = res.voltage_drop.max((s.v[node] - drop).abs());
        res.current = res
            .current
            .max((s.l[k] * up - s.p[k] * s.p[k] - s.q[k] * s.q[k]).abs());
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{feeder_33, two_bus};

    #[test]
    fn unloaded_network_is_flat() {
        let net = feeder_33();
        let x = Scenario(vec![0.0; net.scenario_dim()]);
        let s = solve_power_flow(&net, &x, &Dispatch::zeros(net.pv_count())).unwrap();
        assert!(s.v.iter().all(|&v| v == net.v0));
        assert!(s.l.iter().all(|&l| l == 0.0));
        assert!(s.p.iter().chain(&s.q).all(|&f| f == 0.0));
    }

    #[test]
    fn two_bus_matches_scalar_fixed_point() {
        let net = two_bus(0.05, 0.05);
        let x = Scenario(vec![0.1, 0.05, 0.0]);
        let s = solve_power_flow(&net, &x, &Dispatch::zeros(net.pv_count())).unwrap();
        // scalar oracle: iterate l -> (P,Q,V1) -> l to machine precision
        let (mut l, mut v1) = (0.0_f64, 1.0_f64);
        for _ in 0..200 {
            let pb = 0.1 + 0.05 * l;
            let qb = 0.05 + 0.05 * l;
            v1 = 1.0 - 2.0 * (0.05 * pb + 0.05 * qb) + 0.005 * l;
            l = (pb * pb + qb * qb) / 1.0;
        }
        assert!((s.l[0] - l).abs() < 1e-12, "{} vs {}", s.l[0], l);
        assert!((s.v[1] - v1).abs() < 1e-12);
    }

    #[test]
    fn nominal_33_residuals() {
        let net = feeder_33();
        let x = net.nominal_scenario();
        let d = Dispatch::zeros(net.pv_count());
        let s = solve_power_flow(&net, &x, &d).unwrap();
        let r = power_flow_residuals(&net, &x, &d, &s);
        assert!(r.max() <= 1e-8, "{r:?}");
        assert_eq!(s.v[0], net.v0);
    }

    #[test]
    fn heavier_load_lowers_voltage_on_two_bus() {
        let net = two_bus(0.05, 0.05);
        let mut last = f64::INFINITY;
        for i in 0..40 {
            let pl = 0.01 * i as f64;
            let s = solve_power_flow(
                &net,
                &Scenario(vec![pl, 0.5 * pl, 0.0]),
                &Dispatch::zeros(1),
            )
            .unwrap();
            assert!(s.v[1] < last);
            last = s.v[1];
        }
    }

    #[test]
    fn absurd_load_fails() {
        let net = two_bus(0.05, 0.05);
        let err = solve_power_flow(&net, &Scenario(vec![20.0, 10.0, 0.0]), &Dispatch::zeros(1));
        assert!(matches!(
            err,
            Err(Error::Divergence { .. }) | Err(Error::VoltageCollapse { .. })
        ));
    }
}
