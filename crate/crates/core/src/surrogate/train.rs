use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Sample, Split};
use super::mlp::Mlp;
use super::model::{DispatchModel, Normalization};
use super::sensitivity::reduced_vjp;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::network::{
    build_matrices, check_feasibility, solve_power_flow, DistFlowMatrices, NetworkData,
};

/// Weights of the hinge penalties on voltage and current limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub pi_v: f64,
    pub pi_l: f64,
}

impl PenaltyWeights {
    pub const NONE: Self = Self {
        pi_v: 0.0,
        pi_l: 0.0,
    };

    pub fn is_zero(&self) -> bool {
        self.pi_v == 0.0 && self.pi_l == 0.0
    }
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    /// Mean total loss over the samples whose power flow converged.
    pub loss: f64,
    pub supervised: f64,
    pub penalty: f64,
    pub grad: Vec<f64>,
    pub used: usize,
    /// Samples dropped because the power flow failed.
    pub skipped: usize,
}

struct SampleTerms {
    supervised: f64,
    penalty: f64,
    grad: Option<Vec<f64>>,
}

/// Loss of one sample; `None` when the power flow at the prediction fails.
fn sample_terms(
    model: &DispatchModel,
    net: &NetworkData,
    mat: &DistFlowMatrices,
    s: &Sample,
    w: PenaltyWeights,
    with_grad: bool,
) -> Result<Option<SampleTerms>> {
    let (f, cache) = model.forward(&s.x)?;
    let mut g_f: Vec<f64> =
        f.0.iter()
            .zip(&s.label.0)
            .map(|(a, b)| 2.0 * (a - b))
            .collect();
    let supervised: f64 =
        f.0.iter()
            .zip(&s.label.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
    let mut penalty = 0.0;
    if !w.is_zero() {
        let state = match solve_power_flow(net, &s.x, &f) {
            Ok(st) => st,
            Err(Error::Divergence { .. } | Error::VoltageCollapse { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let n = net.n();
        let mut g_v = vec![0.0; n];
        let mut g_l = vec![0.0; n];
        let mut active = false;
        for b in 0..n {
            let v = state.v[b + 1];
            if v < net.v_min {
                penalty += w.pi_v * (net.v_min - v);
                g_v[b] = -w.pi_v;
                active = true;
            } else if v > net.v_max {
                penalty += w.pi_v * (v - net.v_max);
                g_v[b] = w.pi_v;
                active = true;
            }
            if state.l[b] > net.l_max[b] {
                penalty += w.pi_l * (state.l[b] - net.l_max[b]);
                g_l[b] = w.pi_l;
                active = true;
            }
        }
        if active && with_grad {
            let implicit = reduced_vjp(net, mat, &state, &g_v, &g_l)?;
            g_f.iter_mut().zip(implicit).for_each(|(g, e)| *g += e);
        }
    }
    let grad = with_grad.then(|| {
        let mut grad = vec![0.0; model.mlp.num_params()];
        model.backward(&s.x, &cache, &g_f, &mut grad);
        grad
    });
    Ok(Some(SampleTerms {
        supervised,
        penalty,
        grad,
    }))
}

/// Mean penalized loss over `batch` and its gradient with respect to the
/// model parameters. Per-sample results are reduced in batch order, so the
/// outcome does not depend on `mode`.
pub fn loss_and_grad(
    model: &DispatchModel,
    net: &NetworkData,
    mat: &DistFlowMatrices,
    batch: &[&Sample],
    weights: PenaltyWeights,
    mode: Execution,
) -> Result<LossGrad> {
    reduce(
        model,
        batch.len(),
        map_indexed(mode, batch.len(), |i| {
            sample_terms(model, net, mat, batch[i], weights, true)
        }),
    )
}

/// Mean loss without gradient.
pub fn evaluate_loss(
    model: &DispatchModel,
    net: &NetworkData,
    mat: &DistFlowMatrices,
    batch: &[&Sample],
    weights: PenaltyWeights,
    mode: Execution,
) -> Result<LossGrad> {
    reduce(
        model,
        batch.len(),
        map_indexed(mode, batch.len(), |i| {
            sample_terms(model, net, mat, batch[i], weights, false)
        }),
    )
}

fn reduce(
    model: &DispatchModel,
    total: usize,
    parts: Vec<Result<Option<SampleTerms>>>,
) -> Result<LossGrad> {
    let mut grad = vec![0.0; model.mlp.num_params()];
    let (mut sup, mut pen, mut used) = (0.0, 0.0, 0usize);
    for part in parts {
        if let Some(t) = part? {
            sup += t.supervised;
            pen += t.penalty;
            used += 1;
            if let Some(g) = t.grad {
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
        }
    }
    if used == 0 {
        return Err(Error::EmptyBatch);
    }
    let c = used as f64;
    grad.iter_mut().for_each(|g| *g /= c);
    Ok(LossGrad {
        loss: (sup + pen) / c,
        supervised: sup / c,
        penalty: pen / c,
        grad,
        used,
        skipped: total - used,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Initial learning rate of the penalized phase.
    pub penalty_learning_rate: f64,
    pub batch_size: usize,
    /// Epochs of plain regression (first phase).
    pub pretrain_epochs: usize,
    /// Epochs with the feasibility penalties switched on (second phase).
    pub penalty_epochs: usize,
    /// Learning rate is multiplied by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub penalty: PenaltyWeights,
    pub seed: u64,
    /// Tolerance of the validation feasibility rate.
    pub feasibility_tol: f64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            penalty_learning_rate: 1e-4,
            batch_size: 64,
            pretrain_epochs: 600,
            penalty_epochs: 100,
            decay_every: 200,
            decay_factor: 0.5,
            penalty: PenaltyWeights {
                pi_v: 10.0,
                pi_l: 10.0,
            },
            seed: 0,
            feasibility_tol: 1e-6,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: u8,
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_feasible_rate: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best validation checkpoint of the regression phase.
    pub pretrained: DispatchModel,
    /// Best validation checkpoint of the penalized phase.
    pub penalized: DispatchModel,
    pub log: Vec<EpochRecord>,
}

pub fn write_log_csv(log: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in log {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
        }
    }
}

/// Share of `samples` whose predicted dispatch is feasible.
pub fn feasible_rate(
    model: &DispatchModel,
    net: &NetworkData,
    samples: &[&Sample],
    tol: f64,
    mode: Execution,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let flags = map_indexed(mode, samples.len(), |i| -> Result<bool> {
        let d = model.predict(&samples[i].x)?;
        Ok(check_feasibility(net, &samples[i].x, &d, tol)?.feasible)
    });
    let mut ok = 0usize;
    for f in flags {
        ok += f? as usize;
    }
    Ok(ok as f64 / samples.len() as f64)
}

/// Two-phase training: regression on the labels, then the same loss plus
/// the feasibility penalties. Each phase keeps its best validation
/// checkpoint. Runs are deterministic for a given seed in either execution
/// mode.
pub fn train(net: &NetworkData, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let train_set = data.split(Split::Train);
    let val_set = data.split(Split::Val);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Input(
            "training needs non-empty train and validation splits".into(),
        ));
    }
    if cfg.batch_size == 0 || cfg.decay_every == 0 {
        return Err(Error::Input(
            "batch size and decay period must be positive".into(),
        ));
    }
    let mat = build_matrices(net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes = vec![net.scenario_dim()];
    sizes.extend(&cfg.hidden);
    sizes.push(net.dispatch_dim());
    let norm = Normalization::fit(train_set.iter().map(|s| &s.x), net.scenario_dim());
    let mut model = DispatchModel::new(net, Mlp::init(&sizes, &mut rng), norm)?;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut run_phase = |phase: u8,
                         epochs: usize,
                         lr0: f64,
                         weights: PenaltyWeights,
                         model: &mut DispatchModel|
     -> Result<DispatchModel> {
        let mut adam = Adam::new(model.mlp.num_params());
        let mut best = model.clone();
        let mut best_val = evaluate_loss(model, net, &mat, &val_set, weights, cfg.execution)?.loss;
        for epoch in 0..epochs {
            let lr = lr0 * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32);
            order.shuffle(&mut rng);
            let (mut total, mut count, mut skipped) = (0.0, 0usize, 0usize);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| train_set[i]).collect();
                let lg = match loss_and_grad(model, net, &mat, &batch, weights, cfg.execution) {
                    Ok(lg) => lg,
                    Err(Error::EmptyBatch) => {
                        skipped += batch.len();
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                if !lg.loss.is_finite() || lg.grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Training { epoch });
                }
                total += lg.loss * lg.used as f64;
                count += lg.used;
                skipped += lg.skipped;
                adam.step(&mut model.mlp.params, &lg.grad, lr);
            }
            let val = evaluate_loss(model, net, &mat, &val_set, weights, cfg.execution)?;
            let rate = feasible_rate(model, net, &val_set, cfg.feasibility_tol, cfg.execution)?;
            if val.loss < best_val {
                best_val = val.loss;
                best = model.clone();
            }
            let rec = EpochRecord {
                phase,
                epoch,
                learning_rate: lr,
                train_loss: if count > 0 {
                    total / count as f64
                } else {
                    f64::NAN
                },
                val_loss: val.loss,
                val_feasible_rate: rate,
                skipped,
            };
            log::debug!(
                "phase {phase} epoch {epoch}: train {:.4e} val {:.4e} feasible {:.3}",
                rec.train_loss,
                rec.val_loss,
                rec.val_feasible_rate
            );
            log.push(rec);
        }
        Ok(best)
    };

    let pretrained = run_phase(
        1,
        cfg.pretrain_epochs,
        cfg.learning_rate,
        PenaltyWeights::NONE,
        &mut model,
    )?;
    model = pretrained.clone();
    let penalized = run_phase(
        2,
        cfg.penalty_epochs,
        cfg.penalty_learning_rate,
        cfg.penalty,
        &mut model,
    )?;
    Ok(TrainOutcome {
        pretrained,
        penalized,
        log,
    })
}
