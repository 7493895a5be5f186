//! Key-value run configuration.
//!
//! The file is TOML with flat keys; every key is optional and every value
//! can be overridden on the command line. Recognised keys:
//!
//! ```text
//! network          = "33"          # "33", "129" or a path to a network JSON file
//! radius           = 0.25          # relative scenario box around nominal
//! seed             = 0
//! count            = 7000          # dataset size
//! hidden           = [64, 64]
//! learning_rate    = 1e-3
//! penalty_learning_rate = 1e-4
//! batch_size       = 64
//! pretrain_epochs  = 600
//! penalty_epochs   = 100
//! decay_every      = 200
//! decay_factor     = 0.5
//! pi_v             = 10.0
//! pi_l             = 10.0
//! oracle_starts    = 5
//! bisection_max_iter = 30
//! bisection_tol    = 1e-6
//! feasibility_tol  = 1e-6
//! reference_factor = 2.0           # epigraph scaling used by fit-ip
//! sequential       = false         # disable the thread pool
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use derdispatch::bench::{BenchConfig, DatasetConfig};
use derdispatch::network::{feeder_129, feeder_33, NetworkData};
use derdispatch::projection::BisectionConfig;
use derdispatch::robust::CertifyOptions;
use derdispatch::surrogate::{PenaltyWeights, TrainConfig};
use derdispatch::Execution;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: String,
    pub radius: f64,
    pub seed: u64,
    pub count: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub penalty_learning_rate: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub penalty_epochs: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub pi_v: f64,
    pub pi_l: f64,
    pub oracle_starts: usize,
    pub bisection_max_iter: usize,
    pub bisection_tol: f64,
    pub feasibility_tol: f64,
    pub reference_factor: f64,
    pub sequential: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let data = DatasetConfig::default();
        let bis = BisectionConfig::default();
        Self {
            network: "33".into(),
            radius: data.radius,
            seed: 0,
            count: data.count,
            hidden: train.hidden,
            learning_rate: train.learning_rate,
            penalty_learning_rate: train.penalty_learning_rate,
            batch_size: train.batch_size,
            pretrain_epochs: train.pretrain_epochs,
            penalty_epochs: train.penalty_epochs,
            decay_every: train.decay_every,
            decay_factor: train.decay_factor,
            pi_v: train.penalty.pi_v,
            pi_l: train.penalty.pi_l,
            oracle_starts: data.oracle.starts,
            bisection_max_iter: bis.max_iter,
            bisection_tol: bis.tol,
            feasibility_tol: bis.feasibility_tol,
            reference_factor: CertifyOptions::default().reference_factor.unwrap_or(1.0),
            sequential: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    pub fn network(&self) -> Result<NetworkData> {
        Ok(match self.network.as_str() {
            "33" => feeder_33(),
            "129" => feeder_129(),
            path => NetworkData::load(path).with_context(|| format!("loading network {path}"))?,
        })
    }

    pub fn dataset(&self) -> DatasetConfig {
        let mut d = DatasetConfig {
            count: self.count,
            radius: self.radius,
            seed: self.seed,
            execution: self.execution(),
            ..Default::default()
        };
        d.oracle.starts = self.oracle_starts;
        d.oracle.seed = self.seed;
        d
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden.clone(),
            learning_rate: self.learning_rate,
            penalty_learning_rate: self.penalty_learning_rate,
            batch_size: self.batch_size,
            pretrain_epochs: self.pretrain_epochs,
            penalty_epochs: self.penalty_epochs,
            decay_every: self.decay_every,
            decay_factor: self.decay_factor,
            penalty: PenaltyWeights {
                pi_v: self.pi_v,
                pi_l: self.pi_l,
            },
            seed: self.seed,
            feasibility_tol: self.feasibility_tol,
            execution: self.execution(),
        }
    }

    pub fn bisection(&self) -> BisectionConfig {
        BisectionConfig {
            max_iter: self.bisection_max_iter,
            tol: self.bisection_tol,
            feasibility_tol: self.feasibility_tol,
        }
    }

    pub fn bench(&self, solver_baseline: bool) -> BenchConfig {
        BenchConfig {
            bisection: self.bisection(),
            solver_baseline,
            execution: self.execution(),
            ..Default::default()
        }
    }

    pub fn certify(&self) -> CertifyOptions {
        CertifyOptions {
            reference_factor: Some(self.reference_factor),
            ..Default::default()
        }
    }
}
