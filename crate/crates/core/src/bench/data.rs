use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::{label_oracle, OracleConfig};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::network::{build_matrices, NetworkData, Scenario};
use crate::robust::{eval_interior_point, AffineRule, ScenarioBox};
use crate::surrogate::{LabeledDataset, Sample, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count: usize,
    /// Relative perturbation of loads and PV availability around nominal.
    pub radius: f64,
    pub seed: u64,
    /// Largest share of samples that may be redrawn after an oracle failure.
    pub max_resample_rate: f64,
    pub oracle: OracleConfig,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 7000,
            radius: 0.25,
            seed: 0,
            max_resample_rate: 0.01,
            oracle: OracleConfig::default(),
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub dataset: LabeledDataset,
    /// Draws rejected because the oracle found no feasible point.
    pub resampled: usize,
}

/// Split sizes in the ratio 5:1:1; any remainder goes to the test split.
pub fn split_sizes(count: usize) -> (usize, usize, usize) {
    let train = count * 5 / 7;
    let val = count / 7;
    (train, val, count - train - val)
}

/// Draws `count` scenarios uniformly from the box around nominal, labels each
/// with the oracle (seeded with the rule's interior point when a rule is
/// given) and assigns splits by a seeded shuffle. Sample `i` uses its own
/// random stream, so the result does not depend on the execution mode.
pub fn generate_dataset(
    net: &NetworkData,
    rule: Option<&AffineRule>,
    cfg: &DatasetConfig,
) -> Result<GeneratedDataset> {
    let bx = ScenarioBox::around(&net.nominal_scenario(), cfg.radius)?;
    let mat = build_matrices(net);
    let budget = (cfg.max_resample_rate * cfg.count as f64).floor() as usize;
    let labelled = map_indexed(
        cfg.execution,
        cfg.count,
        |i| -> Result<(Scenario, super::OracleResult, usize)> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            let mut redraws = 0;
            loop {
                let x = bx.sample(&mut rng);
                let extra = match rule {
                    Some(r) => vec![eval_interior_point(r, &x)?.dispatch],
                    None => Vec::new(),
                };
                let oracle = OracleConfig {
                    seed: cfg.oracle.seed ^ (i as u64),
                    ..cfg.oracle.clone()
                };
                match label_oracle(net, &mat, &x, &extra, &oracle) {
                    Ok(res) => return Ok((x, res, redraws)),
                    Err(Error::Oracle) if redraws < budget => redraws += 1,
                    Err(e) => return Err(e),
                }
            }
        },
    );
    let mut resampled = 0;
    let mut samples = Vec::with_capacity(cfg.count);
    for (i, item) in labelled.into_iter().enumerate() {
        let (x, res, redraws) = item?;
        resampled += redraws;
        samples.push(Sample {
            id: i,
            split: Split::Train,
            x,
            label: res.dispatch,
            objective: res.objective,
        });
    }
    if resampled > budget {
        return Err(Error::Oracle);
    }
    let mut order: Vec<usize> = (0..cfg.count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let (train, val, _) = split_sizes(cfg.count);
    for (rank, &i) in order.iter().enumerate() {
        samples[i].split = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(GeneratedDataset {
        dataset: LabeledDataset { samples },
        resampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{check_feasibility, feeder_33};

    #[test]
    fn seven_samples_split_five_one_one() {
        let net = feeder_33();
        let cfg = DatasetConfig {
            count: 7,
            ..Default::default()
        };
        let g = generate_dataset(&net, None, &cfg).unwrap();
        let ds = &g.dataset;
        assert_eq!(ds.split(Split::Train).len(), 5);
        assert_eq!(ds.split(Split::Val).len(), 1);
        assert_eq!(ds.split(Split::Test).len(), 1);
        let nominal = net.nominal_scenario();
        for s in &ds.samples {
            assert!(
                check_feasibility(&net, &s.x, &s.label, 1e-6)
                    .unwrap()
                    .feasible
            );
            for (v, n) in s.x.0.iter().zip(&nominal.0) {
                if *n != 0.0 {
                    let ratio = v / n;
                    assert!((0.75..=1.25).contains(&ratio));
                }
            }
        }
        let again = generate_dataset(
            &net,
            None,
            &DatasetConfig {
                execution: Execution::Sequential,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(again.dataset, g.dataset);
    }

    #[test]
    fn split_sizes_for_multiples_of_seven() {
        assert_eq!(split_sizes(7000), (5000, 1000, 1000));
        assert_eq!(split_sizes(14), (10, 2, 2));
    }
}
