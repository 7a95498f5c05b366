//! Region-of-interest power and trial averaging.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::forward::ForwardModel;
use super::InverseError;

/// Mean of `s̄²` over the ROI rows, one value per column.
pub fn instantaneous_power(mean: &DMatrix<f64>, vertices: &[usize]) -> Vec<f64> {
    if vertices.is_empty() {
        return vec![0.0; mean.ncols()];
    }
    let n = vertices.len() as f64;
    mean.column_iter().map(|col| vertices.iter().map(|&v| col[v] * col[v]).sum::<f64>() / n).collect()
}

/// Causal moving average; the first `window - 1` outputs average over the
/// samples seen so far.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let mut tracker = MovingAverage::new(window);
    x.iter().map(|&v| tracker.push(v)).collect()
}

/// ROI power of a block of posterior means (N_d × N_t): sliding mean over
/// `window` samples of the ROI-averaged squared source amplitude.
pub fn roi_power(mean: &DMatrix<f64>, model: &ForwardModel, roi: &str, window: usize) -> Result<Vec<f64>, InverseError> {
    let vertices = model.roi(roi)?;
    Ok(moving_average(&instantaneous_power(mean, vertices), window))
}

/// Streaming causal moving average. The sum is recomputed from the buffer
/// on every push so results do not depend on history length.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    window: usize,
    buf: VecDeque<f64>,
}

impl MovingAverage {
    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        Self { window, buf: VecDeque::with_capacity(window) }
    }

    pub fn push(&mut self, x: f64) -> f64 {
        if self.buf.len() == self.window {
            self.buf.pop_front();
        }
        self.buf.push_back(x);
        self.buf.iter().sum::<f64>() / self.buf.len() as f64
    }
}

/// Pointwise mean and sample standard deviation of equal-length curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialAverage {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub n_trials: usize,
}

pub fn trial_average(trials: &[Vec<f64>]) -> Result<TrialAverage, InverseError> {
    if trials.len() < 2 {
        return Err(InverseError::InsufficientTrials { needed: 2, got: trials.len() });
    }
    let len = trials[0].len();
    if let Some(t) = trials.iter().find(|t| t.len() != len) {
        return Err(InverseError::LengthMismatch { expected: len, got: t.len() });
    }
    let n = trials.len() as f64;
    let mean: Vec<f64> = (0..len).map(|i| trials.iter().map(|t| t[i]).sum::<f64>() / n).collect();
    let sd = (0..len)
        .map(|i| (trials.iter().map(|t| (t[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
        .collect();
    Ok(TrialAverage { mean, sd, n_trials: trials.len() })
}

impl TrialAverage {
    /// Mean over the samples whose time falls in `[start_s, end_s)`.
    pub fn mean_over(&self, times_s: &[f64], start_s: f64, end_s: f64) -> f64 {
        let vals: Vec<f64> =
            times_s.iter().zip(&self.mean).filter(|(t, _)| **t >= start_s && **t < end_s).map(|(_, v)| *v).collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }
}

/// `time_s,<name>_mean,<name>_sd,...`
pub fn write_trial_average_csv<W: Write>(
    w: W,
    times_s: &[f64],
    curves: &[(String, TrialAverage)],
) -> Result<(), InverseError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["time_s".to_string()];
    for (name, _) in curves {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_sd"));
    }
    out.write_record(&header)?;
    for (i, t) in times_s.iter().enumerate() {
        let mut row = vec![t.to_string()];
        for (_, c) in curves {
            row.push(c.mean[i].to_string());
            row.push(c.sd[i].to_string());
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_input_zero_power() {
        let m = DMatrix::zeros(10, 20);
        assert!(instantaneous_power(&m, &[1, 2, 3]).iter().all(|&p| p == 0.0));
    }

    #[test]
    fn moving_average_by_hand() {
        assert_eq!(moving_average(&[2.0, 4.0, 6.0, 8.0], 2), vec![2.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn two_trial_mean_is_exact() {
        let a = vec![1.0, 2.0, 3.0];
        let b = vec![3.0, 6.0, -1.0];
        let avg = trial_average(&[a.clone(), b.clone()]).unwrap();
        for i in 0..3 {
            assert_eq!(avg.mean[i], (a[i] + b[i]) / 2.0);
        }
        let same = trial_average(&[a.clone(), a.clone(), a]).unwrap();
        assert!(same.sd.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn trial_average_errors() {
        assert!(matches!(trial_average(&[vec![1.0]]), Err(InverseError::InsufficientTrials { .. })));
        assert!(matches!(trial_average(&[vec![1.0], vec![1.0, 2.0]]), Err(InverseError::LengthMismatch { .. })));
    }

    proptest! {
        #[test]
        fn power_ignores_vertices_outside_roi(seed in 0u64..1000, swap in 4usize..9) {
            let m = DMatrix::from_fn(9, 5, |i, j| ((seed as f64 + 1.0) * (i * 5 + j) as f64).sin());
            let roi = [0usize, 1, 2];
            let mut permuted = m.clone();
            permuted.swap_rows(3, swap);
            prop_assert_eq!(instantaneous_power(&m, &roi), instantaneous_power(&permuted, &roi));
        }
    }
}
