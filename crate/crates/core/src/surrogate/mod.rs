//! Neural dispatch surrogate and its training through the power flow.

mod dataset;
mod mlp;
mod model;
mod sensitivity;
mod train;

pub use dataset::{LabeledDataset, Sample, Split};
pub use mlp::{ForwardCache, Mlp};
pub use model::{DispatchModel, Normalization, MODEL_VERSION};
pub use sensitivity::{
    implicit_state_sensitivity, reduced_state_sensitivity, reduced_vjp, Sensitivity,
};
pub use train::{
    evaluate_loss, feasible_rate, loss_and_grad, train, write_log_csv, EpochRecord, LossGrad,
    PenaltyWeights, TrainConfig, TrainOutcome,
};
