//! Hann-windowed periodograms and band power.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;

use super::DspError;

/// Periodic Hann window; mean square is exactly 3/8.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// One-sided power spectra, one row per channel.
///
/// Scaled so that the bins of each row sum to the mean square of the
/// windowed signal, `(1/N) Σ (w·x)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs_hz: Vec<f64>,
    pub power: Vec<Vec<f64>>,
}

impl Spectrum {
    /// Summed power of bins with `low_hz <= f <= high_hz`, per channel.
    pub fn band_power(&self, low_hz: f64, high_hz: f64) -> Vec<f64> {
        self.power
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&self.freqs_hz)
                    .filter(|(_, &f)| f >= low_hz && f <= high_hz)
                    .map(|(p, _)| p)
                    .sum()
            })
            .collect()
    }

    pub fn total_power(&self) -> Vec<f64> {
        self.power.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn peak_hz(&self, channel: usize) -> f64 {
        let row = &self.power[channel];
        let (i, _) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
        self.freqs_hz[i]
    }
}

/// Periodogram of each row of `frame` (channels × samples). The frame
/// length must be a power of two.
pub fn power_fft(frame: &DMatrix<f64>, rate_hz: f64) -> Result<Spectrum, DspError> {
    let n = frame.ncols();
    if n < 2 || !n.is_power_of_two() {
        return Err(DspError::WindowLength(n));
    }
    let window = hann(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let half = n / 2;
    let mut buf = vec![Complex64::default(); n];
    let norm = 1.0 / (n as f64 * n as f64);
    let power = frame
        .row_iter()
        .map(|row| {
            for ((b, x), w) in buf.iter_mut().zip(row.iter()).zip(&window) {
                *b = Complex64::new(x * w, 0.0);
            }
            fft.process(&mut buf);
            (0..=half)
                .map(|k| {
                    let p = buf[k].norm_sqr() * norm;
                    if k == 0 || k == half {
                        p
                    } else {
                        2.0 * p
                    }
                })
                .collect()
        })
        .collect();
    let freqs_hz = (0..=half).map(|k| k as f64 * rate_hz / n as f64).collect();
    Ok(Spectrum { freqs_hz, power })
}

/// Welch average of Hann periodograms over windows of `window_len`
/// advanced by `hop`, for each row of `signal`.
pub fn welch(signal: &DMatrix<f64>, window_len: usize, hop: usize, rate_hz: f64) -> Result<Spectrum, DspError> {
    if hop == 0 || signal.ncols() < window_len {
        return Err(DspError::WindowLength(window_len));
    }
    let mut acc: Option<Spectrum> = None;
    let mut count = 0usize;
    let mut start = 0;
    while start + window_len <= signal.ncols() {
        let seg = signal.columns(start, window_len).into_owned();
        let s = power_fft(&seg, rate_hz)?;
        match acc.as_mut() {
            None => acc = Some(s),
            Some(a) => {
                for (ar, sr) in a.power.iter_mut().zip(&s.power) {
                    ar.iter_mut().zip(sr).for_each(|(x, y)| *x += y);
                }
            }
        }
        count += 1;
        start += hop;
    }
    let mut out = acc.expect("at least one window");
    for row in &mut out.power {
        row.iter_mut().for_each(|p| *p /= count as f64);
    }
    Ok(out)
}
