use serde::{Deserialize, Serialize};

use super::powerflow::{solve_power_flow_from, PowerFlowOptions, SystemState};
use super::{Dispatch, NetworkData, Scenario};
use crate::error::{Error, Result};

/// Worst value of each constraint family, expressed as `lhs - rhs` so that a
/// positive number is a violation and a non-positive one a margin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub pv_box: f64,
    pub inverter: f64,
    pub v_low: f64,
    pub v_high: f64,
    pub current: f64,
    /// Power-flow failure message, when the state could not be computed.
    pub diverged: Option<String>,
    #[serde(skip)]
    pub state: Option<SystemState>,
}

impl FeasibilityReport {
    /// Largest violation over all families (non-positive when feasible at
    /// zero tolerance). Infinite when the power flow failed.
    pub fn worst(&self) -> f64 {
        if self.diverged.is_some() {
            return f64::INFINITY;
        }
        self.pv_box
            .max(self.inverter)
            .max(self.v_low)
            .max(self.v_high)
            .max(self.current)
    }
}

pub fn check_feasibility(
    net: &NetworkData,
    x: &Scenario,
    d: &Dispatch,
    tol: f64,
) -> Result<FeasibilityReport> {
    check_feasibility_from(net, x, d, tol, None)
}

/// As [`check_feasibility`], seeding the power flow from `warm`.
pub fn check_feasibility_from(
    net: &NetworkData,
    x: &Scenario,
    d: &Dispatch,
    tol: f64,
    warm: Option<&SystemState>,
) -> Result<FeasibilityReport> {
    if d.0.len() != net.dispatch_dim() {
        return Err(Error::Dimension {
            what: "dispatch",
            expected: net.dispatch_dim(),
            got: d.0.len(),
        });
    }
    if x.0.len() != net.scenario_dim() {
        return Err(Error::Dimension {
            what: "scenario",
            expected: net.scenario_dim(),
            got: x.0.len(),
        });
    }
    if !(tol >= 0.0) {
        return Err(Error::Input("tolerance must be non-negative".into()));
    }
    let (pv_box, inverter) = local_violation(net, x, d);
    let mut report = FeasibilityReport {
        feasible: false,
        pv_box,
        inverter,
        v_low: f64::NEG_INFINITY,
        v_high: f64::NEG_INFINITY,
        current: f64::NEG_INFINITY,
        diverged: None,
        state: None,
    };
    match solve_power_flow_from(net, x, d, warm, PowerFlowOptions::default()) {
        Ok(state) => {
            for &vi in &state.v[1..] {
                report.v_low = report.v_low.max(net.v_min - vi);
                report.v_high = report.v_high.max(vi - net.v_max);
            }
            for k in 0..net.n() {
                report.current = report.current.max(state.l[k] - net.l_max[k]);
            }
            report.state = Some(state);
            report.feasible = report.worst() <= tol;
        }
        Err(e @ (Error::Divergence { .. } | Error::VoltageCollapse { .. })) => {
            report.diverged = Some(e.to_string());
        }
        Err(e) => return Err(e),
    }
    Ok(report)
}

/// Worst PV-box and inverter-disk values of `d`; these need no power flow.
pub fn local_violation(net: &NetworkData, x: &Scenario, d: &Dispatch) -> (f64, f64) {
    let mut pv_box = f64::NEG_INFINITY;
    let mut inverter = f64::NEG_INFINITY;
    for (i, &k) in net.pv_buses().iter().enumerate() {
        let (p, q) = (d.p()[i], d.q()[i]);
        pv_box = pv_box.max(-p).max(p - x.pv_avail()[k]);
        inverter = inverter.max(p * p + q * q - net.inv_cap[k] * net.inv_cap[k]);
    }
    (pv_box, inverter)
}

/// Line losses plus PV curtailment.
pub fn evaluate_objective(
    net: &NetworkData,
    x: &Scenario,
    state: &SystemState,
    d: &Dispatch,
) -> f64 {
    let losses: f64 = net.r.iter().zip(&state.l).map(|(r, l)| r * l).sum();
    let curtailment: f64 = net
        .pv_buses()
        .iter()
        .enumerate()
        .map(|(i, &k)| x.pv_avail()[k] - d.p()[i])
        .sum();
    losses + curtailment
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{feeder_33, solve_power_flow, two_bus};

    #[test]
    fn zero_dispatch_on_unloaded_network() {
        let net = feeder_33();
        let x = Scenario(vec![0.0; net.scenario_dim()]);
        let r = check_feasibility(&net, &x, &Dispatch::zeros(net.pv_count()), 1e-6).unwrap();
        assert!(r.feasible);
        assert!(r.v_low < 0.0 && r.v_high < 0.0 && r.current < 0.0);
    }

    #[test]
    fn over_availability_flagged() {
        let net = feeder_33();
        let x = net.nominal_scenario();
        let mut d = Dispatch::zero_curtailment(&net, &x);
        d.0[0] *= 1.01;
        let r = check_feasibility(&net, &x, &d, 1e-6).unwrap();
        assert!(!r.feasible);
        assert!(r.pv_box > 1e-6);
    }

    #[test]
    fn wrong_dimension_is_an_error() {
        let net = feeder_33();
        let x = net.nominal_scenario();
        assert!(matches!(
            check_feasibility(&net, &x, &Dispatch::zeros(1), 1e-6),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn objective_is_pure_curtailment_without_flows() {
        let net = feeder_33();
        let mut x = Scenario(vec![0.0; net.scenario_dim()]);
        let n = net.n();
        let pv = net.pv_buses().to_vec();
        for &k in &pv {
            x.0[2 * n + k] = 0.5 / pv.len() as f64;
        }
        let d = Dispatch::zeros(net.pv_count());
        let s = solve_power_flow(&net, &x, &d).unwrap();
        assert!((evaluate_objective(&net, &x, &s, &d) - 0.5).abs() < 1e-12);
        let zero = Scenario(vec![0.0; net.scenario_dim()]);
        let s = solve_power_flow(&net, &zero, &d).unwrap();
        assert_eq!(evaluate_objective(&net, &zero, &s, &d), 0.0);
    }

    #[test]
    fn two_bus_objective_is_resistive_loss() {
        let net = two_bus(0.05, 0.05);
        let x = Scenario(vec![0.1, 0.05, 0.0]);
        let d = Dispatch::zeros(1);
        let s = solve_power_flow(&net, &x, &d).unwrap();
        let mut l = 0.0_f64;
        for _ in 0..200 {
            let pb = 0.1 + 0.05 * l;
            let qb = 0.05 + 0.05 * l;
            l = pb * pb + qb * qb;
        }
        assert!((evaluate_objective(&net, &x, &s, &d) - 0.05 * l).abs() < 1e-13);
    }
}
