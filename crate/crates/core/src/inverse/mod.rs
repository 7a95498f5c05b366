//! Distributed source reconstruction.

mod forward;
mod head;
mod laplacian;
mod roi;
mod solver;

use thiserror::Error;

pub use forward::{ForwardModel, MODEL_MAGIC};
pub use head::{
    electrode_direction, fibonacci_cap, knn_adjacency, radial_dipole_kernel, synthetic_head,
    synthetic_head_with_channels, HeadGeometry, ROI_PRECENTRAL_LEFT, ROI_PRECENTRAL_RIGHT,
};
pub use laplacian::{build_laplacian, PriorKind, SpatialPrior, SINGULAR_RIDGE};
pub use roi::{
    instantaneous_power, moving_average, roi_power, trial_average, write_trial_average_csv, MovingAverage,
    TrialAverage,
};
pub use solver::{AdaptOptions, AdaptReport, InverseState, SourceEstimate, SpectralSolver};

#[derive(Debug, Error)]
pub enum InverseError {
    #[error("unknown ROI {0:?}")]
    UnknownRoi(String),
    #[error("invalid forward model: {0}")]
    InvalidModel(String),
    #[error("empty mesh")]
    EmptyMesh,
    #[error("prior precision is singular")]
    SingularPrior,
    #[error("hyperparameter update is not finite (alpha={alpha}, beta={beta}); state rolled back")]
    NonFiniteUpdate { alpha: f64, beta: f64 },
    #[error("invalid hyperparameters alpha={alpha}, beta={beta}")]
    InvalidHyperparameters { alpha: f64, beta: f64 },
    #[error("frame contains non-finite values")]
    NonFiniteInput,
    #[error("frame has no samples")]
    EmptyFrame,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("curve length {got} differs from {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("need at least {needed} trials, got {got}")]
    InsufficientTrials { needed: usize, got: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
