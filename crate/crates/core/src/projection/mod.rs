//! Feasibility restoration by bisection along the segment from the interior
//! point to the network's dispatch.
//!
//! Feasibility along the segment is checked with the exact power flow. The
//! feasible set need not be star-shaped around the interior point, so the
//! returned coefficient is the lower end of the final bisection interval: a
//! feasible point, not necessarily the largest feasible one.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::network::{
    check_feasibility, check_feasibility_from, evaluate_objective, local_violation, Dispatch,
    NetworkData, Scenario, SystemState,
};
use crate::robust::{eval_interior_point, AffineRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionConfig {
    /// Cap on feasibility checks, the initial full-segment check included.
    pub max_iter: usize,
    /// Width of the final `[kappa_l, kappa_u]` interval.
    pub tol: f64,
    /// Forwarded to the feasibility check.
    pub feasibility_tol: f64,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        Self {
            max_iter: 30,
            tol: 1e-6,
            feasibility_tol: 1e-6,
        }
    }
}

impl BisectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Input(format!(
                "bisection tolerance {} must lie in (0, 1)",
                self.tol
            )));
        }
        let needed = (1.0 / self.tol).log2().ceil() as usize;
        if self.max_iter < needed {
            return Err(Error::Input(format!(
                "{} bisection iterations cannot reach tolerance {} (need {needed})",
                self.max_iter, self.tol
            )));
        }
        if !(self.feasibility_tol >= 0.0) {
            return Err(Error::Input(
                "feasibility tolerance must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub dispatch: Dispatch,
    /// Final lower end of the bisection interval.
    pub kappa: f64,
    /// Final upper end; `kappa_upper - kappa <= tol` unless the input was
    /// already feasible.
    pub kappa_upper: f64,
    /// Feasibility checks performed, the initial one included.
    pub iterations: usize,
    pub feasible_before: bool,
}

/// Exact feasibility test along one segment. Points that break a PV box or
/// inverter limit are rejected without a power flow, and each power flow is
/// seeded from the previous one.
struct SegmentCheck<'a> {
    net: &'a NetworkData,
    x: &'a Scenario,
    tol: f64,
    warm: Option<SystemState>,
}

impl SegmentCheck<'_> {
    fn feasible(&mut self, d: &Dispatch) -> Result<bool> {
        let (pv_box, inverter) = local_violation(self.net, self.x, d);
        if pv_box.max(inverter) > self.tol {
            return Ok(false);
        }
        // a failed power flow counts as infeasible
        let r = check_feasibility_from(self.net, self.x, d, self.tol, self.warm.as_ref())?;
        if r.state.is_some() {
            self.warm = r.state;
        }
        Ok(r.feasible)
    }
}

/// Returns `kappa_l (f_nn - f_ip) + f_ip` for the bisection lower bound
/// `kappa_l`, or `f_nn` unchanged when it is already feasible.
pub fn project(
    net: &NetworkData,
    x: &Scenario,
    f_nn: &Dispatch,
    f_ip: &Dispatch,
    cfg: &BisectionConfig,
) -> Result<Projection> {
    cfg.validate()?;
    if f_nn.0.len() != f_ip.0.len() {
        return Err(Error::Dimension {
            what: "interior point",
            expected: f_nn.0.len(),
            got: f_ip.0.len(),
        });
    }
    let mut check = SegmentCheck {
        net,
        x,
        tol: cfg.feasibility_tol,
        warm: None,
    };
    if check.feasible(f_nn)? {
        return Ok(Projection {
            dispatch: f_nn.clone(),
            kappa: 1.0,
            kappa_upper: 1.0,
            iterations: 1,
            feasible_before: true,
        });
    }
    if !check.feasible(f_ip)? {
        return Err(Error::CertificateFailure(
            "interior point fails the exact feasibility check".into(),
        ));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut iterations = 1;
    while iterations < cfg.max_iter && hi - lo > cfg.tol {
        let mid = 0.5 * (lo + hi);
        iterations += 1;
        if check.feasible(&f_nn.interpolate(f_ip, mid))? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let dispatch = if lo == 0.0 {
        f_ip.clone()
    } else {
        f_nn.interpolate(f_ip, lo)
    };
    Ok(Projection {
        dispatch,
        kappa: lo,
        kappa_upper: hi,
        iterations,
        feasible_before: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRecord {
    pub id: usize,
    pub kappa: f64,
    pub iterations: usize,
    pub feasible_before: bool,
    pub feasible_after: bool,
    pub objective_before: f64,
    pub objective_after: f64,
    pub seconds: f64,
    /// Error message when the sample could not be projected.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BatchProjection {
    pub records: Vec<ProjectionRecord>,
    pub dispatches: Vec<Option<Dispatch>>,
    pub feasible_rate: f64,
    pub median_seconds: f64,
}

fn objective_of(net: &NetworkData, x: &Scenario, d: &Dispatch) -> f64 {
    match check_feasibility(net, x, d, f64::INFINITY) {
        Ok(r) => r
            .state
            .map_or(f64::NAN, |s| evaluate_objective(net, x, &s, d)),
        Err(_) => f64::NAN,
    }
}

/// Projects each `(x, f_nn)` towards the rule's interior point for `x`.
/// Failures are recorded per sample and do not stop the batch. Timings
/// cover the interior-point evaluation and the bisection.
pub fn batch_project(
    net: &NetworkData,
    items: &[(Scenario, Dispatch)],
    rule: &AffineRule,
    cfg: &BisectionConfig,
    mode: Execution,
) -> Result<BatchProjection> {
    cfg.validate()?;
    let actual = net.fingerprint();
    if rule.fingerprint != actual {
        return Err(Error::Fingerprint {
            expected: rule.fingerprint.clone(),
            actual,
        });
    }
    let out = map_indexed(mode, items.len(), |i| {
        let (x, f_nn) = &items[i];
        let start = Instant::now();
        let res =
            eval_interior_point(rule, x).and_then(|ip| project(net, x, f_nn, &ip.dispatch, cfg));
        let seconds = start.elapsed().as_secs_f64();
        let objective_before = objective_of(net, x, f_nn);
        match res {
            Ok(p) => {
                let after = check_feasibility(net, x, &p.dispatch, cfg.feasibility_tol);
                let (feasible_after, objective_after) = match &after {
                    Ok(r) => (
                        r.feasible,
                        r.state
                            .as_ref()
                            .map_or(f64::NAN, |s| evaluate_objective(net, x, s, &p.dispatch)),
                    ),
                    Err(_) => (false, f64::NAN),
                };
                let rec = ProjectionRecord {
                    id: i,
                    kappa: p.kappa,
                    iterations: p.iterations,
                    feasible_before: p.feasible_before,
                    feasible_after,
                    objective_before,
                    objective_after,
                    seconds,
                    error: None,
                };
                (rec, Some(p.dispatch))
            }
            Err(e) => {
                let rec = ProjectionRecord {
                    id: i,
                    kappa: f64::NAN,
                    iterations: 0,
                    feasible_before: false,
                    feasible_after: false,
                    objective_before,
                    objective_after: f64::NAN,
                    seconds,
                    error: Some(e.to_string()),
                };
                (rec, None)
            }
        }
    });
    let (records, dispatches): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    let ok = records.iter().filter(|r| r.feasible_after).count();
    let mut times: Vec<f64> = records.iter().map(|r| r.seconds).collect();
    Ok(BatchProjection {
        feasible_rate: if records.is_empty() {
            0.0
        } else {
            ok as f64 / records.len() as f64
        },
        median_seconds: median(&mut times),
        records,
        dispatches,
    })
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

pub fn write_records_csv(records: &[ProjectionRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::feeder_33;

    fn setup() -> (NetworkData, Scenario, Dispatch, Dispatch) {
        let net = feeder_33();
        let mut x = net.nominal_scenario();
        let n = net.n();
        // light load, plenty of sun: full output overvolts
        for b in 0..n {
            x.0[b] *= 0.2;
            x.0[n + b] *= 0.2;
            x.0[2 * n + b] *= 3.0;
        }
        let k = net.pv_count();
        let f_nn = Dispatch(
            net.pv_buses()
                .iter()
                .map(|&b| x.pv_avail()[b].min(net.inv_cap[b]))
                .chain(std::iter::repeat_n(0.0, k))
                .collect(),
        );
        let f_ip = Dispatch::zeros(k);
        (net, x, f_nn, f_ip)
    }

    #[test]
    fn feasible_input_passes_through() {
        let (net, x, _, f_ip) = setup();
        let p = project(&net, &x, &f_ip, &f_ip, &BisectionConfig::default()).unwrap();
        assert_eq!(p.dispatch, f_ip);
        assert_eq!((p.kappa, p.iterations), (1.0, 1));
    }

    #[test]
    fn infeasible_input_is_restored() {
        let (net, x, f_nn, f_ip) = setup();
        let cfg = BisectionConfig::default();
        assert!(
            !check_feasibility(&net, &x, &f_nn, cfg.feasibility_tol)
                .unwrap()
                .feasible
        );
        let p = project(&net, &x, &f_nn, &f_ip, &cfg).unwrap();
        assert!(
            check_feasibility(&net, &x, &p.dispatch, cfg.feasibility_tol)
                .unwrap()
                .feasible
        );
        assert!(p.kappa > 0.0 && p.kappa < 1.0);
        assert!(p.kappa_upper - p.kappa <= cfg.tol);
        assert!(p.iterations <= cfg.max_iter);
        assert!(p.dispatch.distance(&f_nn) <= f_ip.distance(&f_nn));
    }

    #[test]
    fn infeasible_anchor_is_a_certificate_failure() {
        let (net, x, f_nn, _) = setup();
        let err = project(&net, &x, &f_nn, &f_nn, &BisectionConfig::default()).unwrap_err();
        assert!(matches!(err, Error::CertificateFailure(_)));
    }

    #[test]
    fn iteration_cap_is_checked() {
        let cfg = BisectionConfig {
            max_iter: 10,
            tol: 1e-6,
            feasibility_tol: 1e-6,
        };
        assert!(cfg.validate().is_err());
        assert!(BisectionConfig::default().validate().is_ok());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
