//! Gaussian classifiers on feature vectors.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::covariance::{shrunk_covariance, Shrinkage};
use super::BciError;
use crate::event::ClassLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Shared covariance.
    #[default]
    Lda,
    /// One covariance per class.
    QuadraticGaussian,
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lda" => Ok(Self::Lda),
            "qda" | "quadratic" | "quadratic_gaussian" => Ok(Self::QuadraticGaussian),
            _ => Err(format!("unknown classifier {s:?}; expected lda or qda")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub kind: ClassifierKind,
    pub classes: Vec<ClassLabel>,
    pub means: Vec<DVector<f64>>,
    /// One per class; identical for LDA.
    pub covariances: Vec<DMatrix<f64>>,
    pub priors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: ClassLabel,
    /// Posterior per class, in the model's class order.
    pub probabilities: Vec<f64>,
}

/// Centred features of one class as a dim × n matrix.
fn centred(features: &[&DVector<f64>], mean: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_columns(&features.iter().map(|f| *f - mean).collect::<Vec<_>>())
}

/// Makes a covariance usable: if it is not positive definite after
/// shrinkage (e.g. one sample per class), a ridge scaled to the feature
/// spread is added.
fn regularize(cov: DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>, BciError> {
    if cov.clone().cholesky().is_some() {
        return Ok(cov);
    }
    let d = cov.nrows();
    let base = (cov.trace() / d as f64).max(scale).max(1e-12);
    for k in [1e-6, 1e-3, 1.0] {
        let mut c = cov.clone();
        for i in 0..d {
            c[(i, i)] += k * base;
        }
        if c.clone().cholesky().is_some() {
            return Ok(c);
        }
    }
    Err(BciError::SingularCovariance)
}

pub fn train_classifier(
    features: &[DVector<f64>],
    labels: &[ClassLabel],
    kind: ClassifierKind,
    shrinkage: Shrinkage,
) -> Result<ClassifierModel, BciError> {
    if features.len() != labels.len() {
        return Err(BciError::DimensionMismatch(format!("{} feature vectors, {} labels", features.len(), labels.len())));
    }
    let dim = features.first().map(|f| f.len()).unwrap_or(0);
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(BciError::DimensionMismatch("feature vectors must share a non-zero dimension".into()));
    }
    if features.iter().any(|f| f.iter().any(|v| !v.is_finite())) {
        return Err(BciError::DimensionMismatch("non-finite feature".into()));
    }
    let mut classes: Vec<ClassLabel> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(BciError::InvalidConfig("need at least two classes".into()));
    }
    let n = features.len() as f64;
    let grouped: Vec<Vec<&DVector<f64>>> = classes
        .iter()
        .map(|c| features.iter().zip(labels).filter(|(_, l)| *l == c).map(|(f, _)| f).collect())
        .collect();
    let means: Vec<DVector<f64>> =
        grouped.iter().map(|g| g.iter().fold(DVector::zeros(dim), |acc, f| acc + *f) / g.len() as f64).collect();
    let priors = grouped.iter().map(|g| g.len() as f64 / n).collect();

    // Spread of the class means, used to scale the fallback ridge.
    let grand = features.iter().fold(DVector::zeros(dim), |acc, f| acc + f) / n;
    let spread = means.iter().map(|m| (m - &grand).norm_squared()).sum::<f64>() / (classes.len() * dim) as f64;

    let covariances = match kind {
        ClassifierKind::Lda => {
            let blocks: Vec<DMatrix<f64>> = grouped.iter().zip(&means).map(|(g, m)| centred(g, m)).collect();
            let pooled = DMatrix::from_columns(&blocks.iter().flat_map(|b| b.column_iter().map(|c| c.into_owned())).collect::<Vec<_>>());
            // Columns are already centred per class; re-centring the pool is a
            // no-op up to rounding.
            let (cov, _) = shrunk_covariance(&pooled, shrinkage);
            let cov = regularize(cov, spread)?;
            vec![cov; classes.len()]
        }
        ClassifierKind::QuadraticGaussian => grouped
            .iter()
            .zip(&means)
            .map(|(g, m)| regularize(shrunk_covariance(&centred(g, m), shrinkage).0, spread))
            .collect::<Result<_, _>>()?,
    };
    Ok(ClassifierModel { kind, classes, means, covariances, priors })
}

impl ClassifierModel {
    fn log_joint(&self, x: &DVector<f64>) -> Result<Vec<f64>, BciError> {
        let dim = self.means[0].len();
        if x.len() != dim {
            return Err(BciError::DimensionMismatch(format!("feature has {} entries, model {dim}", x.len())));
        }
        let chols: Vec<Cholesky<f64, Dyn>> = self
            .covariances
            .iter()
            .map(|c| c.clone().cholesky().ok_or(BciError::SingularCovariance))
            .collect::<Result<_, _>>()?;
        Ok(self
            .means
            .iter()
            .zip(&chols)
            .zip(&self.priors)
            .map(|((m, ch), p)| {
                let d = x - m;
                let maha = d.dot(&ch.solve(&d));
                let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                p.ln() - 0.5 * maha - 0.5 * logdet
            })
            .collect())
    }

    pub fn classify(&self, x: &DVector<f64>) -> Result<Prediction, BciError> {
        let lj = self.log_joint(x)?;
        let max = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lj.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = w.iter().sum();
        let probabilities: Vec<f64> = w.iter().map(|v| v / z).collect();
        let best = (0..lj.len()).max_by(|&a, &b| lj[a].total_cmp(&lj[b])).unwrap();
        Ok(Prediction { label: self.classes[best], probabilities })
    }

    /// Squared Mahalanobis distance to a class mean under its covariance.
    pub fn mahalanobis(&self, x: &DVector<f64>, class: ClassLabel) -> Option<f64> {
        let i = self.classes.iter().position(|&c| c == class)?;
        let d = x - &self.means[i];
        let ch = self.covariances[i].clone().cholesky()?;
        Some(d.dot(&ch.solve(&d)))
    }
}
