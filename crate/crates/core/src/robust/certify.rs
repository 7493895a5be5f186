use serde::{Deserialize, Serialize};

use super::{fit_affine_rule, AffineRule, FitOptions, ScenarioBox};
use crate::error::{Error, Result};
use crate::inner::{assemble_inner_system, make_taylor_cuts, InnerOptions, InnerSystem, Pairing};
use crate::network::{build_matrices, solve_power_flow, Dispatch, NetworkData, Scenario};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub pairing: Pairing,
    /// Multiple of the worst corner current used as the epigraph reference;
    /// `None` leaves every cone unscaled.
    pub reference_factor: Option<f64>,
    pub fit: FitOptions,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            pairing: Pairing::Sound,
            reference_factor: Some(2.0),
            fit: FitOptions::default(),
        }
    }
}

/// Per-branch squared current, maximised over two box corners: heaviest
/// load with no PV, and lightest load with all PV at its upper bound.
pub fn corner_currents(net: &NetworkData, bx: &ScenarioBox) -> Result<Vec<f64>> {
    let n = net.n();
    if bx.dim() != net.scenario_dim() {
        return Err(Error::Dimension {
            what: "scenario box",
            expected: net.scenario_dim(),
            got: bx.dim(),
        });
    }
    let heavy = Scenario(bx.upper.clone());
    let mut light = bx.lower.clone();
    light[2 * n..].copy_from_slice(&bx.upper[2 * n..]);
    let light = Scenario(light);
    let sh = solve_power_flow(net, &heavy, &Dispatch::zeros(net.pv_count()))?;
    let sl = solve_power_flow(net, &light, &Dispatch::zero_curtailment(net, &light))?;
    Ok((0..n).map(|j| sh.l[j].max(sl.l[j])).collect())
}

/// Inner system with Taylor cuts expanded at the nominal operating point
/// (no curtailment, unity power factor).
pub fn build_inner_system(
    net: &NetworkData,
    bx: &ScenarioBox,
    opts: &CertifyOptions,
) -> Result<InnerSystem> {
    let x = net.nominal_scenario();
    let base = solve_power_flow(net, &x, &Dispatch::zero_curtailment(net, &x))?;
    let cuts = make_taylor_cuts(net, &base)?;
    let epigraph_reference = match opts.reference_factor {
        None => None,
        Some(f) => {
            let floor = 1e-6 * net.l_max.iter().cloned().fold(0.0, f64::max);
            Some(
                corner_currents(net, bx)?
                    .into_iter()
                    .map(|l| (f * l).max(floor))
                    .collect(),
            )
        }
    };
    assemble_inner_system(
        net,
        &build_matrices(net),
        &cuts,
        &InnerOptions {
            pairing: opts.pairing,
            epigraph_reference,
        },
    )
}

/// Builds the inner system and fits the robust rule for `bx`.
pub fn certify(
    net: &NetworkData,
    bx: &ScenarioBox,
    opts: &CertifyOptions,
) -> Result<(InnerSystem, AffineRule)> {
    let sys = build_inner_system(net, bx, opts)?;
    let rule = fit_affine_rule(&sys, bx, &net.fingerprint(), &opts.fit)?;
    Ok((sys, rule))
}
