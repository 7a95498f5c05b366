//! Common spatial patterns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::covariance::{shrunk_covariance, Shrinkage};
use super::BciError;
use crate::dsp::{BandpassSpec, TrialSet};
use crate::event::ClassLabel;

/// Spatial filter bank. Rows of `filters` are filters; `eigvals[i]` is the
/// fraction of filter `i`'s combined variance owed to the first class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CspModel {
    pub filters: DMatrix<f64>,
    pub eigvals: Vec<f64>,
    pub classes: [ClassLabel; 2],
    pub band: BandpassSpec,
    pub interval_s: (f64, f64),
    pub channel_names: Vec<String>,
}

/// Pools all epochs of a class (channels × samples each) and estimates
/// their covariance.
pub fn class_covariance(trials: &TrialSet, class: ClassLabel, shrinkage: Shrinkage) -> Result<DMatrix<f64>, BciError> {
    let epochs: Vec<&DMatrix<f64>> =
        trials.epochs.iter().filter(|e| e.class_label == Some(class)).map(|e| &e.data).collect();
    if epochs.len() < 2 {
        return Err(BciError::InsufficientTrials { class: class.name().into(), needed: 2, got: epochs.len() });
    }
    let nc = trials.channels();
    let total: usize = epochs.iter().map(|e| e.ncols()).sum();
    let mut pooled = DMatrix::zeros(nc, total);
    let mut at = 0;
    for e in epochs {
        // Each epoch is centred on its own mean before pooling.
        let mut block = e.clone();
        for mut row in block.row_iter_mut() {
            let m = row.mean();
            row.add_scalar_mut(-m);
        }
        pooled.columns_mut(at, block.ncols()).copy_from(&block);
        at += block.ncols();
    }
    Ok(shrunk_covariance(&pooled, shrinkage).0)
}

/// Solves `Σ₁ w = λ (Σ₁ + Σ₂) w` by whitening the composite covariance and
/// keeps the `m` filters from each end of the spectrum, eigenvalues in
/// descending order.
pub fn csp_from_covariances(s1: &DMatrix<f64>, s2: &DMatrix<f64>, m: usize) -> Result<(DMatrix<f64>, Vec<f64>), BciError> {
    let nc = s1.nrows();
    if m == 0 || 2 * m > nc {
        return Err(BciError::InvalidConfig(format!("m = {m} needs 1 <= 2m <= {nc} channels")));
    }
    let composite = s1 + s2;
    let composite = (&composite + composite.transpose()) * 0.5;
    let eig = composite.symmetric_eigen();
    let max = eig.eigenvalues.max();
    if !(max > 0.0) || eig.eigenvalues.min() <= 1e-12 * max {
        return Err(BciError::RankDeficientCovariance);
    }
    let inv_sqrt = DVector::from_iterator(nc, eig.eigenvalues.iter().map(|d| 1.0 / d.sqrt()));
    let whitening = DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    let w1 = &whitening * s1 * whitening.transpose();
    let w1 = (&w1 + w1.transpose()) * 0.5;
    let inner = w1.symmetric_eigen();
    let mut order: Vec<usize> = (0..nc).collect();
    order.sort_by(|&a, &b| inner.eigenvalues[b].total_cmp(&inner.eigenvalues[a]));
    let keep: Vec<usize> = order[..m].iter().chain(&order[nc - m..]).copied().collect();
    let all = inner.eigenvectors.transpose() * whitening;
    let filters = all.select_rows(keep.iter());
    let eigvals = keep.iter().map(|&i| inner.eigenvalues[i]).collect();
    Ok((filters, eigvals))
}

/// Trains CSP on two classes. Epochs are band-passed (zero phase) and
/// cropped to `interval_s` first.
pub fn train_csp(
    trials: &TrialSet,
    classes: [ClassLabel; 2],
    band: BandpassSpec,
    interval_s: (f64, f64),
    m: usize,
    shrinkage: Shrinkage,
) -> Result<CspModel, BciError> {
    let prepared = prepare(trials, &band, interval_s)?;
    train_csp_prepared(&prepared, classes, band, interval_s, m, shrinkage)
}

/// As [`train_csp`], for epochs already filtered and cropped.
pub fn train_csp_prepared(
    prepared: &TrialSet,
    classes: [ClassLabel; 2],
    band: BandpassSpec,
    interval_s: (f64, f64),
    m: usize,
    shrinkage: Shrinkage,
) -> Result<CspModel, BciError> {
    let s1 = class_covariance(prepared, classes[0], shrinkage)?;
    let s2 = class_covariance(prepared, classes[1], shrinkage)?;
    let (filters, eigvals) = csp_from_covariances(&s1, &s2, m)?;
    Ok(CspModel { filters, eigvals, classes, band, interval_s, channel_names: prepared.channel_names.clone() })
}

/// Band-pass then crop.
pub fn prepare(trials: &TrialSet, band: &BandpassSpec, interval_s: (f64, f64)) -> Result<TrialSet, BciError> {
    Ok(trials.bandpassed(band)?.cropped(interval_s.0, interval_s.1)?)
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// `log(var(w_i X) / Σ_j var(w_j X))` for a prepared epoch.
pub fn csp_features(epoch: &DMatrix<f64>, model: &CspModel) -> Result<DVector<f64>, BciError> {
    if epoch.nrows() != model.filters.ncols() {
        return Err(BciError::DimensionMismatch(format!(
            "epoch has {} channels, filters expect {}",
            epoch.nrows(),
            model.filters.ncols()
        )));
    }
    let projected = &model.filters * epoch;
    let vars: Vec<f64> = projected.row_iter().map(|r| variance(&r.iter().copied().collect::<Vec<_>>())).collect();
    let total: f64 = vars.iter().sum();
    if !(total > 0.0) || vars.iter().any(|&v| v <= 0.0) {
        return Err(BciError::ZeroVariance);
    }
    Ok(DVector::from_iterator(vars.len(), vars.iter().map(|v| (v / total).ln())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Epoch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_trials(rng: &mut ChaCha8Rng, sd: [&[f64]; 2], per_class: usize, len: usize, mix: &DMatrix<f64>) -> TrialSet {
        let nc = mix.nrows();
        let mut epochs = Vec::new();
        for (ci, class) in [ClassLabel::Left, ClassLabel::Right].into_iter().enumerate() {
            for _ in 0..per_class {
                let raw = DMatrix::from_fn(nc, len, |r, _| sd[ci][r] * { let z: f64 = StandardNormal.sample(&mut *rng); z });
                epochs.push(Epoch {
                    trial_id: epochs.len(),
                    class_label: Some(class),
                    event_sample: 0,
                    event_time_ns: 0,
                    data: mix * raw,
                });
            }
        }
        TrialSet { rate_hz: 128.0, channel_names: (0..nc).map(|i| format!("C{i}")).collect(), pre_samples: 0, epochs }
    }

    #[test]
    fn two_channel_closed_form() {
        // Σ₁ = diag(2, 1), Σ₂ = diag(1, 2): eigenvalues 2/3 and 1/3 with
        // coordinate-axis filters.
        let s1 = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let s2 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let (w, ev) = csp_from_covariances(&s1, &s2, 1).unwrap();
        assert!((ev[0] - 2.0 / 3.0).abs() < 1e-12 && (ev[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(w[(0, 1)].abs() < 1e-12 && w[(1, 0)].abs() < 1e-12);

        // Sampled version converges to the same.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sd = [&[2f64.sqrt(), 1.0][..], &[1.0, 2f64.sqrt()][..]];
        let t = gaussian_trials(&mut rng, sd, 100, 400, &DMatrix::identity(2, 2));
        let s1 = class_covariance(&t, ClassLabel::Left, Shrinkage::None).unwrap();
        let s2 = class_covariance(&t, ClassLabel::Right, Shrinkage::None).unwrap();
        let (_, ev) = csp_from_covariances(&s1, &s2, 1).unwrap();
        assert!((ev[0] - 2.0 / 3.0).abs() < 0.01 && (ev[1] - 1.0 / 3.0).abs() < 0.01, "{ev:?}");
    }

    #[test]
    fn diagonalizes_and_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mix = DMatrix::from_fn(6, 6, |_, _| StandardNormal.sample(&mut rng));
        let sd = [&[3.0, 1.0, 1.0, 1.0, 1.0, 0.5][..], &[1.0, 1.0, 2.0, 1.0, 1.0, 2.0][..]];
        let t = gaussian_trials(&mut rng, sd, 20, 100, &mix);
        let s1 = class_covariance(&t, ClassLabel::Left, Shrinkage::LedoitWolf).unwrap();
        let s2 = class_covariance(&t, ClassLabel::Right, Shrinkage::LedoitWolf).unwrap();
        let (w, ev) = csp_from_covariances(&s1, &s2, 3).unwrap();
        assert!(ev.windows(2).all(|p| p[0] >= p[1]));
        for s in [&s1, &s2] {
            let d = &w * s * w.transpose();
            let diag_norm = d.diagonal().norm();
            for i in 0..6 {
                for j in 0..6 {
                    if i != j {
                        assert!(d[(i, j)].abs() < 1e-8 * diag_norm);
                    }
                }
            }
        }
        for (i, row) in w.row_iter().enumerate() {
            let a = (row * &s1 * row.transpose())[(0, 0)];
            let b = (row * &s2 * row.transpose())[(0, 0)];
            assert!((a / (a + b) + b / (a + b) - 1.0).abs() < 1e-10);
            assert!((a / (a + b) - ev[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sd = [&[3.0, 1.0, 1.0, 0.7][..], &[1.0, 1.0, 2.5, 1.0][..]];
        let t = gaussian_trials(&mut rng, sd, 15, 80, &DMatrix::identity(4, 4));
        let q = DMatrix::from_fn(4, 4, |_, _| StandardNormal.sample(&mut rng)).qr().q();
        let rotated = TrialSet {
            epochs: t.epochs.iter().map(|e| Epoch { data: &q * &e.data, ..e.clone() }).collect(),
            ..t.clone()
        };
        let band = BandpassSpec::mu_beta();
        let classes = [ClassLabel::Left, ClassLabel::Right];
        let a = train_csp_prepared(&t, classes, band, (0.0, 1.0), 2, Shrinkage::LedoitWolf).unwrap();
        let b = train_csp_prepared(&rotated, classes, band, (0.0, 1.0), 2, Shrinkage::LedoitWolf).unwrap();
        for (x, y) in a.eigvals.iter().zip(&b.eigvals) {
            assert!((x - y).abs() < 1e-10);
        }
        for (e, er) in t.epochs.iter().zip(&rotated.epochs) {
            let fa = csp_features(&e.data, &a).unwrap();
            let fb = csp_features(&er.data, &b).unwrap();
            assert!((fa - fb).norm() < 1e-8);
        }
    }

    #[test]
    fn features_scale_invariant_and_zero_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sd = [&[2.0, 1.0, 1.0][..], &[1.0, 1.0, 2.0][..]];
        let t = gaussian_trials(&mut rng, sd, 5, 50, &DMatrix::identity(3, 3));
        let model = train_csp_prepared(&t, [ClassLabel::Left, ClassLabel::Right], BandpassSpec::mu_beta(), (0.0, 1.0), 1, Shrinkage::None).unwrap();
        let e = &t.epochs[0].data;
        let f = csp_features(e, &model).unwrap();
        let g = csp_features(&(e * 37.5), &model).unwrap();
        assert!((f - g).norm() < 1e-12);
        assert!(matches!(csp_features(&DMatrix::zeros(3, 50), &model), Err(BciError::ZeroVariance)));
    }

    #[test]
    fn identical_classes_cluster_at_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sd = [&[1.0; 4][..], &[1.0; 4][..]];
        let t = gaussian_trials(&mut rng, sd, 100, 200, &DMatrix::identity(4, 4));
        let s1 = class_covariance(&t, ClassLabel::Left, Shrinkage::None).unwrap();
        let s2 = class_covariance(&t, ClassLabel::Right, Shrinkage::None).unwrap();
        let (_, ev) = csp_from_covariances(&s1, &s2, 2).unwrap();
        assert!(ev.iter().all(|v| (v - 0.5).abs() < 0.02), "{ev:?}");
    }
}
