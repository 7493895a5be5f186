//! Radial feeder model: topology, DistFlow matrices, exact power flow and the
//! feasibility/objective oracles used by every other module.
//!
//! Indexing convention used throughout the crate: nodes are `0..=n` with node
//! 0 the substation. Every non-root node `i` has exactly one parent branch;
//! that branch and the node share the *bus index* `k = i - 1`. Vectors over
//! branches and vectors over non-root nodes therefore have the same layout.

mod data;
mod feasibility;
mod matrices;
mod powerflow;

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use data::{feeder_129, feeder_33, two_bus};
pub use feasibility::{
    check_feasibility, check_feasibility_from, evaluate_objective, local_violation,
    FeasibilityReport,
};
pub use matrices::{build_matrices, DistFlowMatrices, SignSplit};
pub use powerflow::{
    injections, power_flow_residuals, solve_power_flow, solve_power_flow_from, PowerFlowOptions,
    Residuals, SystemState,
};

/// On-disk network description. All electrical quantities are per unit on
/// `base_mva`; voltages and current limits are squared magnitudes.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NetworkFile {
    pub base_mva: f64,
    pub v0_sq: f64,
    pub v_min_sq: f64,
    pub v_max_sq: f64,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BusRecord {
    pub id: usize,
    #[serde(default)]
    pub p_load: f64,
    #[serde(default)]
    pub q_load: f64,
    #[serde(default)]
    pub pv_avail: f64,
    #[serde(default)]
    pub inv_cap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BranchRecord {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub l_max_sq: f64,
}

/// Validated radial network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkData {
    pub base_mva: f64,
    pub v0: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Parent node of each node; `parent[0]` is unused.
    parent: Vec<usize>,
    /// Children (node ids) of each node.
    children: Vec<Vec<usize>>,
    /// Non-root node ids ordered so that parents precede children.
    order: Vec<usize>,
    /// Per branch (bus index): resistance, reactance, squared current limit.
    pub r: Vec<f64>,
    pub x: Vec<f64>,
    pub l_max: Vec<f64>,
    /// Per non-root bus: nominal loads, nominal PV availability, inverter rating.
    pub p_load: Vec<f64>,
    pub q_load: Vec<f64>,
    pub pv_avail: Vec<f64>,
    pub inv_cap: Vec<f64>,
    /// Bus indices hosting a PV inverter (`inv_cap > 0`).
    pv_buses: Vec<usize>,
}

impl NetworkData {
    pub fn from_file(file: &NetworkFile) -> Result<Self> {
        let nodes = file.buses.len();
        if nodes < 2 {
            return Err(Error::Topology("need at least two buses".into()));
        }
        let n = nodes - 1;
        if file.branches.len() != n {
            return Err(Error::Topology(format!(
                "radial network with {nodes} buses needs {n} branches, found {}",
                file.branches.len()
            )));
        }
        let mut bus_of_id: Vec<Option<&BusRecord>> = vec![None; nodes];
        for b in &file.buses {
            if b.id >= nodes {
                return Err(Error::Topology(format!(
                    "bus id {} out of range 0..{nodes}",
                    b.id
                )));
            }
            if bus_of_id[b.id].replace(b).is_some() {
                return Err(Error::Topology(format!("duplicate bus id {}", b.id)));
            }
        }

        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
        for (idx, br) in file.branches.iter().enumerate() {
            if br.from >= nodes || br.to >= nodes || br.from == br.to {
                return Err(Error::Topology(format!(
                    "branch {idx} ({}-{}) has invalid endpoints",
                    br.from, br.to
                )));
            }
            adj[br.from].push((br.to, idx));
            adj[br.to].push((br.from, idx));
        }

        let mut parent = vec![usize::MAX; nodes];
        let mut branch_of = vec![usize::MAX; nodes];
        let mut children = vec![Vec::new(); nodes];
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; nodes];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &(v, idx) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = u;
                    branch_of[v] = idx;
                    children[u].push(v);
                    order.push(v);
                    queue.push_back(v);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Topology("network is not connected".into()));
        }

        let mut r = vec![0.0; n];
        let mut x = vec![0.0; n];
        let mut l_max = vec![0.0; n];
        let mut p_load = vec![0.0; n];
        let mut q_load = vec![0.0; n];
        let mut pv_avail = vec![0.0; n];
        let mut inv_cap = vec![0.0; n];
        for node in 1..nodes {
            let k = node - 1;
            let br = &file.branches[branch_of[node]];
            r[k] = br.r;
            x[k] = br.x;
            l_max[k] = br.l_max_sq;
            let bus = bus_of_id[node].expect("every id present");
            p_load[k] = bus.p_load;
            q_load[k] = bus.q_load;
            pv_avail[k] = bus.pv_avail;
            inv_cap[k] = bus.inv_cap;
        }
        let root = bus_of_id[0].expect("root present");
        if root.pv_avail != 0.0 || root.inv_cap != 0.0 || root.p_load != 0.0 || root.q_load != 0.0 {
            return Err(Error::Input(
                "substation bus must carry no load or PV".into(),
            ));
        }

        let pv_buses = (0..n).filter(|&k| inv_cap[k] > 0.0).collect();
        let net = NetworkData {
            base_mva: file.base_mva,
            v0: file.v0_sq,
            v_min: file.v_min_sq,
            v_max: file.v_max_sq,
            parent,
            children,
            order,
            r,
            x,
            l_max,
            p_load,
            q_load,
            pv_avail,
            inv_cap,
            pv_buses,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(self.v_min > 0.0 && self.v_min <= self.v0 && self.v0 <= self.v_max) {
            return Err(Error::Input(format!(
                "voltage limits must satisfy 0 < v_min <= v0 <= v_max (got {} {} {})",
                self.v_min, self.v0, self.v_max
            )));
        }
        for k in 0..self.n() {
            if !(self.r[k] >= 0.0 && self.x[k] >= 0.0) {
                return Err(Error::Input(format!("branch {k}: negative impedance")));
            }
            if !(self.l_max[k] > 0.0) {
                return Err(Error::Input(format!(
                    "branch {k}: current limit must be positive"
                )));
            }
            if self.pv_avail[k] < 0.0 || self.inv_cap[k] < 0.0 {
                return Err(Error::Input(format!("bus {}: negative PV rating", k + 1)));
            }
            if self.inv_cap[k] == 0.0 && self.pv_avail[k] != 0.0 {
                return Err(Error::Input(format!(
                    "bus {}: PV availability without an inverter",
                    k + 1
                )));
            }
            if self.inv_cap[k] > 0.0 && self.inv_cap[k] < self.pv_avail[k] {
                return Err(Error::Input(format!(
                    "bus {}: inverter rating below nominal PV availability",
                    k + 1
                )));
            }
        }
        if !(finite(&self.r)
            && finite(&self.x)
            && finite(&self.l_max)
            && finite(&self.p_load)
            && finite(&self.q_load)
            && finite(&self.pv_avail)
            && finite(&self.inv_cap))
        {
            return Err(Error::Input("non-finite network parameter".into()));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(s)?;
        Self::from_file(&file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_file(&self) -> NetworkFile {
        let n = self.n();
        let mut buses = vec![BusRecord {
            id: 0,
            p_load: 0.0,
            q_load: 0.0,
            pv_avail: 0.0,
            inv_cap: 0.0,
        }];
        let mut branches = Vec::with_capacity(n);
        for k in 0..n {
            buses.push(BusRecord {
                id: k + 1,
                p_load: self.p_load[k],
                q_load: self.q_load[k],
                pv_avail: self.pv_avail[k],
                inv_cap: self.inv_cap[k],
            });
            branches.push(BranchRecord {
                from: self.parent[k + 1],
                to: k + 1,
                r: self.r[k],
                x: self.x[k],
                l_max_sq: self.l_max[k],
            });
        }
        NetworkFile {
            base_mva: self.base_mva,
            v0_sq: self.v0,
            v_min_sq: self.v_min,
            v_max_sq: self.v_max,
            buses,
            branches,
        }
    }

    /// Hex SHA-256 of the canonical JSON form. Artifacts store this and refuse
    /// to load against a different network.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(&self.to_file()).expect("network serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Number of non-root nodes (= number of branches).
    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn pv_buses(&self) -> &[usize] {
        &self.pv_buses
    }

    pub fn pv_count(&self) -> usize {
        self.pv_buses.len()
    }

    /// Parent node id of non-root node `node`.
    pub fn parent(&self, node: usize) -> usize {
        self.parent[node]
    }

    /// Bus index of the branch feeding the parent of bus `k`, i.e. the
    /// upstream branch, or `None` when bus `k` hangs off the substation.
    pub fn upstream_bus(&self, k: usize) -> Option<usize> {
        let p = self.parent[k + 1];
        (p != 0).then(|| p - 1)
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    /// Non-root node ids, parents before children.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn nominal_scenario(&self) -> Scenario {
        Scenario::from_parts(&self.p_load, &self.q_load, &self.pv_avail)
    }

    pub fn scenario_dim(&self) -> usize {
        3 * self.n()
    }

    pub fn dispatch_dim(&self) -> usize {
        2 * self.pv_count()
    }

    /// Replaces every impedance by zero. Used by tests and sanity checks.
    pub fn with_zero_impedance(&self) -> Self {
        let mut out = self.clone();
        out.r.iter_mut().for_each(|v| *v = 0.0);
        out.x.iter_mut().for_each(|v| *v = 0.0);
        out
    }
}

/// Uncertain parameters `x = (P^L, Q^L, P̄^PV)`, each block over all non-root
/// buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario(pub Vec<f64>);

impl Scenario {
    pub fn from_parts(p_load: &[f64], q_load: &[f64], pv_avail: &[f64]) -> Self {
        let mut v = Vec::with_capacity(3 * p_load.len());
        v.extend_from_slice(p_load);
        v.extend_from_slice(q_load);
        v.extend_from_slice(pv_avail);
        Scenario(v)
    }

    pub fn n(&self) -> usize {
        self.0.len() / 3
    }

    pub fn p_load(&self) -> &[f64] {
        &self.0[..self.n()]
    }

    pub fn q_load(&self) -> &[f64] {
        let n = self.n();
        &self.0[n..2 * n]
    }

    pub fn pv_avail(&self) -> &[f64] {
        let n = self.n();
        &self.0[2 * n..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// PV setpoints `f = (P^PV, Q^PV)` stacked over the PV buses of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch(pub Vec<f64>);

impl Dispatch {
    pub fn zeros(pv_count: usize) -> Self {
        Dispatch(vec![0.0; 2 * pv_count])
    }

    /// Full PV output at unity power factor.
    pub fn zero_curtailment(net: &NetworkData, x: &Scenario) -> Self {
        let mut d = Self::zeros(net.pv_count());
        for (i, &k) in net.pv_buses().iter().enumerate() {
            d.0[i] = x.pv_avail()[k];
        }
        d
    }

    pub fn pv_count(&self) -> usize {
        self.0.len() / 2
    }

    pub fn p(&self) -> &[f64] {
        &self.0[..self.pv_count()]
    }

    pub fn q(&self) -> &[f64] {
        &self.0[self.pv_count()..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `kappa * (self - anchor) + anchor`.
    pub fn interpolate(&self, anchor: &Dispatch, kappa: f64) -> Dispatch {
        Dispatch(
            self.0
                .iter()
                .zip(&anchor.0)
                .map(|(&a, &b)| kappa * (a - b) + b)
                .collect(),
        )
    }

    pub fn distance(&self, other: &Dispatch) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}
