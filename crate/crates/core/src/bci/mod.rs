//! Motor-imagery decoding: CSP filters, log-variance features and
//! Gaussian classifiers.

mod classifier;
mod covariance;
mod csp;
mod cv;

use thiserror::Error;

pub use classifier::{train_classifier, ClassifierKind, ClassifierModel, Prediction};
pub use covariance::{shrink, shrunk_covariance, Shrinkage};
pub use csp::{class_covariance, csp_features, csp_from_covariances, prepare, train_csp, train_csp_prepared, CspModel};
pub use cv::{cross_validate, evaluate, feature_matrix, train_bci, train_prepared, write_cv_csv, BciModel, CvConfig, CvRow};

#[derive(Debug, Error)]
pub enum BciError {
    #[error("class {class}: need at least {needed} trials, got {got}")]
    InsufficientTrials { class: String, needed: usize, got: usize },
    #[error("composite covariance is rank deficient")]
    RankDeficientCovariance,
    #[error("covariance is singular even after shrinkage")]
    SingularCovariance,
    #[error("projected epoch has zero variance")]
    ZeroVariance,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
