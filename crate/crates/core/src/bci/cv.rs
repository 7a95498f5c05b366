//! Stratified cross-validation of the CSP + classifier path.

use std::io::Write;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::{train_classifier, ClassifierKind, ClassifierModel};
use super::covariance::Shrinkage;
use super::csp::{csp_features, prepare, train_csp_prepared, CspModel};
use super::BciError;
use crate::dsp::{BandpassSpec, TrialSet};
use crate::event::ClassLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub classes: [ClassLabel; 2],
    pub band: BandpassSpec,
    pub interval_s: (f64, f64),
    pub m_values: Vec<usize>,
    pub folds: usize,
    pub repeats: usize,
    /// Training-set sizes to evaluate (balanced subsamples of each
    /// training split); `None` uses the whole split.
    pub train_sizes: Option<Vec<usize>>,
    pub classifier: ClassifierKind,
    pub shrinkage: Shrinkage,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            classes: [ClassLabel::Left, ClassLabel::Right],
            band: BandpassSpec::mu_beta(),
            interval_s: (0.75, 2.0),
            m_values: vec![3],
            folds: 5,
            repeats: 10,
            train_sizes: None,
            classifier: ClassifierKind::Lda,
            shrinkage: Shrinkage::LedoitWolf,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub m: usize,
    /// Trials per training split; for the full split, the mean size.
    pub train_size: usize,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub repeats: usize,
}

/// A trained CSP + classifier pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BciModel {
    pub csp: CspModel,
    pub classifier: ClassifierModel,
}

impl BciModel {
    /// Features of an already prepared epoch.
    pub fn predict_prepared(&self, epoch: &nalgebra::DMatrix<f64>) -> Result<super::Prediction, BciError> {
        self.classifier.classify(&csp_features(epoch, &self.csp)?)
    }
}

/// Trains on epochs already band-passed and cropped.
pub fn train_prepared(
    prepared: &TrialSet,
    cfg: &CvConfig,
    m: usize,
) -> Result<BciModel, BciError> {
    let csp = train_csp_prepared(prepared, cfg.classes, cfg.band, cfg.interval_s, m, cfg.shrinkage)?;
    let mut feats = Vec::with_capacity(prepared.len());
    let mut labels = Vec::with_capacity(prepared.len());
    for e in &prepared.epochs {
        feats.push(csp_features(&e.data, &csp)?);
        labels.push(e.class_label.expect("filtered to labelled epochs"));
    }
    let classifier = train_classifier(&feats, &labels, cfg.classifier, cfg.shrinkage)?;
    Ok(BciModel { csp, classifier })
}

/// Trains on raw epochs (band-pass and crop applied here).
pub fn train_bci(trials: &TrialSet, cfg: &CvConfig, m: usize) -> Result<BciModel, BciError> {
    let prepared = prepare(&trials.with_classes(&cfg.classes), &cfg.band, cfg.interval_s)?;
    train_prepared(&prepared, cfg, m)
}

/// Fraction of correctly classified raw epochs.
pub fn evaluate(model: &BciModel, trials: &TrialSet) -> Result<f64, BciError> {
    let prepared = prepare(&trials.with_classes(&model.csp.classes), &model.csp.band, model.csp.interval_s)?;
    if prepared.is_empty() {
        return Err(BciError::InsufficientTrials { class: "any".into(), needed: 1, got: 0 });
    }
    let mut correct = 0;
    for e in &prepared.epochs {
        if Some(model.predict_prepared(&e.data)?.label) == e.class_label {
            correct += 1;
        }
    }
    Ok(correct as f64 / prepared.len() as f64)
}

/// Accuracy table over `m` values and training sizes, mean ± SD over
/// repeats. Folds are stratified by class; each repeat reshuffles with
/// its own seed derived from `cfg.seed`. Trials are ordered by `trial_id`
/// before splitting, so the result does not depend on input order.
pub fn cross_validate(trials: &TrialSet, cfg: &CvConfig) -> Result<Vec<CvRow>, BciError> {
    if cfg.folds < 2 || cfg.repeats == 0 || cfg.m_values.is_empty() {
        return Err(BciError::InvalidConfig("need folds >= 2, repeats >= 1 and at least one m".into()));
    }
    let mut subset = trials.with_classes(&cfg.classes);
    subset.epochs.sort_by_key(|e| e.trial_id);
    for class in cfg.classes {
        let got = subset.count(class);
        if got < cfg.folds.max(2) {
            return Err(BciError::InsufficientTrials { class: class.name().into(), needed: cfg.folds.max(2), got });
        }
    }
    let prepared = prepare(&subset, &cfg.band, cfg.interval_s)?;
    let by_class: Vec<Vec<usize>> = cfg
        .classes
        .iter()
        .map(|c| (0..prepared.len()).filter(|&i| prepared.epochs[i].class_label == Some(*c)).collect())
        .collect();

    let sizes: Vec<Option<usize>> = match &cfg.train_sizes {
        None => vec![None],
        Some(v) => v.iter().map(|&s| Some(s)).collect(),
    };
    let mut rows = Vec::new();
    for &m in &cfg.m_values {
        for &size in &sizes {
            let accs: Vec<(f64, usize)> = (0..cfg.repeats)
                .into_par_iter()
                .map(|r| one_repeat(&prepared, &by_class, cfg, m, size, r as u64))
                .collect::<Result<_, _>>()?;
            let n = accs.len() as f64;
            let mean = accs.iter().map(|a| a.0).sum::<f64>() / n;
            let sd = if accs.len() > 1 {
                (accs.iter().map(|a| (a.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let train_size = size.unwrap_or_else(|| (accs.iter().map(|a| a.1).sum::<usize>() as f64 / n).round() as usize);
            rows.push(CvRow { m, train_size, mean_accuracy: mean, sd_accuracy: sd, repeats: cfg.repeats });
        }
    }
    Ok(rows)
}

fn one_repeat(
    prepared: &TrialSet,
    by_class: &[Vec<usize>],
    cfg: &CvConfig,
    m: usize,
    size: Option<usize>,
    repeat: u64,
) -> Result<(f64, usize), BciError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(repeat);
    // Stratified assignment: shuffle each class and deal round-robin.
    let mut fold_of = vec![0usize; prepared.len()];
    for idx in by_class {
        let mut idx = idx.clone();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            fold_of[i] = k % cfg.folds;
        }
    }
    let mut correct = 0usize;
    let mut tested = 0usize;
    let mut train_total = 0usize;
    for fold in 0..cfg.folds {
        let mut train: Vec<usize> = (0..prepared.len()).filter(|&i| fold_of[i] != fold).collect();
        if let Some(s) = size {
            let per_class = s / 2;
            let mut picked = Vec::new();
            for c in cfg.classes {
                let mut pool: Vec<usize> = train.iter().copied().filter(|&i| prepared.epochs[i].class_label == Some(c)).collect();
                if pool.len() < per_class.max(2) {
                    return Err(BciError::InsufficientTrials { class: c.name().into(), needed: per_class.max(2), got: pool.len() });
                }
                pool.shuffle(&mut rng);
                picked.extend_from_slice(&pool[..per_class.max(2)]);
            }
            picked.sort_unstable();
            train = picked;
        }
        train_total += train.len();
        let train_set = TrialSet { epochs: train.iter().map(|&i| prepared.epochs[i].clone()).collect(), ..prepared.clone() };
        let model = train_prepared(&train_set, cfg, m)?;
        for i in (0..prepared.len()).filter(|&i| fold_of[i] == fold) {
            let e = &prepared.epochs[i];
            let pred = model.predict_prepared(&e.data)?;
            correct += usize::from(Some(pred.label) == e.class_label);
            tested += 1;
        }
    }
    Ok((correct as f64 / tested as f64, train_total / cfg.folds))
}

pub fn write_cv_csv<W: Write>(w: W, rows: &[CvRow]) -> Result<(), BciError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["m", "train_size", "mean_accuracy", "sd_accuracy", "repeats"])?;
    for r in rows {
        out.write_record([
            r.m.to_string(),
            r.train_size.to_string(),
            r.mean_accuracy.to_string(),
            r.sd_accuracy.to_string(),
            r.repeats.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Features for every prepared epoch, in order.
pub fn feature_matrix(prepared: &TrialSet, csp: &CspModel) -> Result<Vec<DVector<f64>>, BciError> {
    prepared.epochs.iter().map(|e| csp_features(&e.data, csp)).collect()
}
