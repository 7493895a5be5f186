use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkData, SystemState};

/// First-order expansion of `g(P, Q, V) = (P^2 + Q^2) / V` for one branch,
/// with `V` the sending-end squared voltage. Because `g` is jointly convex
/// for `V > 0`, the expansion underestimates it everywhere on that half-space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorCut {
    pub branch: usize,
    pub p0: f64,
    pub q0: f64,
    pub v0: f64,
    pub l0: f64,
    pub jp: f64,
    pub jq: f64,
    pub jv: f64,
}

impl TaylorCut {
    pub fn at(branch: usize, p0: f64, q0: f64, v0: f64) -> Result<Self> {
        if !(v0 > 0.0) {
            return Err(Error::Input(format!(
                "expansion voltage {v0} on branch {branch} is not positive"
            )));
        }
        let s = p0 * p0 + q0 * q0;
        Ok(TaylorCut {
            branch,
            p0,
            q0,
            v0,
            l0: s / v0,
            jp: 2.0 * p0 / v0,
            jq: 2.0 * q0 / v0,
            jv: -s / (v0 * v0),
        })
    }

    pub fn value(&self, p: f64, q: f64, v: f64) -> f64 {
        self.l0 + self.jp * (p - self.p0) + self.jq * (q - self.q0) + self.jv * (v - self.v0)
    }

    /// `l0 - J . delta0`, the constant of the cut written as `const + J . delta`.
    pub fn constant(&self) -> f64 {
        self.l0 - self.jp * self.p0 - self.jq * self.q0 - self.jv * self.v0
    }
}

/// Cuts for every branch, expanded at `base`.
pub fn make_taylor_cuts(net: &NetworkData, base: &SystemState) -> Result<Vec<TaylorCut>> {
    if base.l.len() != net.n() || base.v.len() != net.n() + 1 {
        return Err(Error::Dimension {
            what: "expansion state",
            expected: net.n(),
            got: base.l.len(),
        });
    }
    (0..net.n())
        .map(|k| TaylorCut::at(k, base.p[k], base.q[k], base.sending_voltage(net, k)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tight_at_center() {
        let c = TaylorCut::at(0, 0.3, -0.2, 0.95).unwrap();
        assert!((c.value(0.3, -0.2, 0.95) - c.l0).abs() < 1e-15);
        assert!(c.jv <= 0.0);
    }

    #[test]
    fn zero_flow_cut_is_zero() {
        let c = TaylorCut::at(0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(c.value(5.0, -3.0, 0.9), 0.0);
    }

    #[test]
    fn rejects_nonpositive_voltage() {
        assert!(TaylorCut::at(0, 0.1, 0.1, 0.0).is_err());
    }
}
