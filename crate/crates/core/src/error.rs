use thiserror::Error;

use crate::lp::LpError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("topology error: {0}")]
    Topology(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error(
        "power flow did not converge in {iterations} iterations (last change {last_change:.3e})"
    )]
    Divergence { iterations: usize, last_change: f64 },

    #[error("voltage collapse at node {node} (squared voltage {value:.3e})")]
    VoltageCollapse { node: usize, value: f64 },

    #[error("power-flow Jacobian is singular")]
    SingularJacobian,

    #[error("linear program: {0}")]
    Lp(#[from] LpError),

    #[error("no interior affine rule exists for this box (best slack {slack:.3e}); try halving the box radius")]
    NoInteriorRule { slack: f64 },

    #[error("interior point is not feasible: {0}")]
    CertificateFailure(String),

    #[error(
        "network fingerprint mismatch: artifact was built for {expected}, network is {actual}"
    )]
    Fingerprint { expected: String, actual: String },

    #[error("training diverged at epoch {epoch}")]
    Training { epoch: usize },

    #[error("every sample in the batch failed to produce a power-flow state")]
    EmptyBatch,

    #[error("label oracle found no feasible point")]
    Oracle,

    #[error("unsupported artifact version {0}")]
    Version(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
