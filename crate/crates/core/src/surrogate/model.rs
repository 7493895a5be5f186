use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{ForwardCache, Mlp};
use crate::error::{Error, Result};
use crate::network::{Dispatch, NetworkData, Scenario};

pub const MODEL_VERSION: u32 = 1;

/// Per-feature affine normalization `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and standard deviation over `xs`; constant features get unit
    /// scale so they map to zero.
    pub fn fit<'a>(xs: impl IntoIterator<Item = &'a Scenario>, dim: usize) -> Self {
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut count = 0usize;
        for x in xs {
            for (i, v) in x.0.iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
            count += 1;
        }
        if count == 0 {
            return Self::identity(dim);
        }
        let c = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / c - m * m).max(0.0);
                let sd = var.sqrt();
                if sd > 1e-9 * (1.0 + m.abs()) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Scenario) -> Vec<f64> {
        x.0.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Dispatch predictor: normalized scenario in, `(P^PV, Q^PV)` out. The
/// active head is `sigmoid(o) * P̄` and the reactive head `tanh(o) * S̄`, so
/// the availability box always holds and `|Q| <= S̄`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchModel {
    pub version: u32,
    pub mlp: Mlp,
    pub normalization: Normalization,
    pub pv_buses: Vec<usize>,
    pub inv_cap: Vec<f64>,
    pub fingerprint: String,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl DispatchModel {
    pub fn new(net: &NetworkData, mlp: Mlp, normalization: Normalization) -> Result<Self> {
        if mlp.input_dim() != net.scenario_dim() {
            return Err(Error::Dimension {
                what: "model input",
                expected: net.scenario_dim(),
                got: mlp.input_dim(),
            });
        }
        if mlp.output_dim() != net.dispatch_dim() {
            return Err(Error::Dimension {
                what: "model output",
                expected: net.dispatch_dim(),
                got: mlp.output_dim(),
            });
        }
        Ok(Self {
            version: MODEL_VERSION,
            mlp,
            normalization,
            pv_buses: net.pv_buses().to_vec(),
            inv_cap: net.pv_buses().iter().map(|&b| net.inv_cap[b]).collect(),
            fingerprint: net.fingerprint(),
        })
    }

    pub fn pv_count(&self) -> usize {
        self.pv_buses.len()
    }

    fn check_input(&self, x: &Scenario) -> Result<()> {
        if x.0.len() != self.mlp.input_dim() {
            return Err(Error::Dimension {
                what: "scenario",
                expected: self.mlp.input_dim(),
                got: x.0.len(),
            });
        }
        Ok(())
    }

    fn head(&self, x: &Scenario, raw: &[f64]) -> Dispatch {
        let k = self.pv_count();
        let avail = x.pv_avail();
        let mut out = vec![0.0; 2 * k];
        for i in 0..k {
            out[i] = sigmoid(raw[i]) * avail[self.pv_buses[i]];
            out[k + i] = raw[k + i].tanh() * self.inv_cap[i];
        }
        Dispatch(out)
    }

    pub fn predict(&self, x: &Scenario) -> Result<Dispatch> {
        self.check_input(x)?;
        let cache = self.mlp.forward(&self.normalization.apply(x));
        Ok(self.head(x, cache.output()))
    }

    pub fn forward(&self, x: &Scenario) -> Result<(Dispatch, ForwardCache)> {
        self.check_input(x)?;
        let cache = self.mlp.forward(&self.normalization.apply(x));
        Ok((self.head(x, cache.output()), cache))
    }

    /// Accumulates `d(g_f . f)/d params` into `grad`.
    pub fn backward(&self, x: &Scenario, cache: &ForwardCache, g_f: &[f64], grad: &mut [f64]) {
        let k = self.pv_count();
        let raw = cache.output();
        let avail = x.pv_avail();
        let mut g_raw = vec![0.0; 2 * k];
        for i in 0..k {
            let s = sigmoid(raw[i]);
            g_raw[i] = g_f[i] * s * (1.0 - s) * avail[self.pv_buses[i]];
            let t = raw[k + i].tanh();
            g_raw[k + i] = g_f[k + i] * (1.0 - t * t) * self.inv_cap[i];
        }
        self.mlp.backward(cache, &g_raw, grad);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.version != MODEL_VERSION {
            return Err(Error::Version(m.version));
        }
        if m.mlp.params.len()
            != m.mlp
                .sizes
                .windows(2)
                .map(|w| w[0] * w[1] + w[1])
                .sum::<usize>()
        {
            return Err(Error::Input(
                "model parameter count does not match its layer sizes".into(),
            ));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Loads a model and checks it was trained for `net`.
    pub fn load(path: impl AsRef<Path>, net: &NetworkData) -> Result<Self> {
        let m = Self::from_json(&std::fs::read_to_string(path)?)?;
        let actual = net.fingerprint();
        if m.fingerprint != actual {
            return Err(Error::Fingerprint {
                expected: m.fingerprint,
                actual,
            });
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::two_bus;

    #[test]
    fn zero_weights_give_half_availability_and_no_reactive() {
        let net = two_bus(0.05, 0.05);
        let model =
            DispatchModel::new(&net, Mlp::zeros(&[3, 8, 2]), Normalization::identity(3)).unwrap();
        let x = net.nominal_scenario();
        let d = model.predict(&x).unwrap();
        assert!((d.p()[0] - 0.5 * x.pv_avail()[0]).abs() < 1e-15);
        assert_eq!(d.q()[0], 0.0);
    }

    #[test]
    fn round_trip_and_fingerprint_check() {
        let net = two_bus(0.05, 0.05);
        let model =
            DispatchModel::new(&net, Mlp::zeros(&[3, 4, 2]), Normalization::identity(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save(&path).unwrap();
        assert_eq!(DispatchModel::load(&path, &net).unwrap(), model);
        let other = two_bus(0.06, 0.05);
        assert!(matches!(
            DispatchModel::load(&path, &other),
            Err(Error::Fingerprint { .. })
        ));
    }
}
