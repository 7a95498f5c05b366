//! Butterworth band-pass design as a cascade of second-order sections,
//! run causally (direct form II transposed) or forward-backward.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DspError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FilterDesign {
    #[default]
    Butterworth,
}

/// `order` is the order of the low-pass prototype; the band-pass has
/// twice as many poles, one biquad per prototype pole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandpassSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    #[serde(default)]
    pub design: FilterDesign,
}

impl BandpassSpec {
    pub fn new(low_hz: f64, high_hz: f64, order: usize) -> Self {
        Self { low_hz, high_hz, order, design: FilterDesign::Butterworth }
    }

    /// 8–13 Hz.
    pub fn alpha() -> Self {
        Self::new(8.0, 13.0, 4)
    }

    /// 8–32 Hz motor-imagery band.
    pub fn mu_beta() -> Self {
        Self::new(8.0, 32.0, 4)
    }

    pub fn validate(&self, rate_hz: f64) -> Result<(), DspError> {
        let ok = self.low_hz > 0.0
            && self.low_hz < self.high_hz
            && self.high_hz < rate_hz / 2.0
            && self.order > 0
            && self.low_hz.is_finite()
            && self.high_hz.is_finite();
        if ok {
            Ok(())
        } else {
            Err(DspError::InvalidBand { low_hz: self.low_hz, high_hz: self.high_hz, order: self.order, rate_hz })
        }
    }
}

/// One second-order section, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (1.0 + self.a[0] * z_inv + self.a[1] * z2)
    }
}

/// A designed cascade together with the rate it was designed for.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
    pub rate_hz: f64,
}

impl Sos {
    pub fn butterworth_bandpass(spec: &BandpassSpec, rate_hz: f64) -> Result<Self, DspError> {
        spec.validate(rate_hz)?;
        let fs2 = 2.0 * rate_hz;
        let warp = |f: f64| fs2 * (PI * f / rate_hz).tan();
        let (wl, wh) = (warp(spec.low_hz), warp(spec.high_hz));
        let w0 = (wl * wh).sqrt();
        let bw = wh - wl;
        let n = spec.order;

        let mut sections = Vec::with_capacity(n);
        let centre = (2.0 * (w0 / fs2).atan()).clamp(0.0, PI);
        let z_inv_c = Complex64::from_polar(1.0, -centre);
        for k in 0..n {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let proto = Complex64::from_polar(1.0, theta);
            let half = proto * bw / 2.0;
            let disc = (half * half - w0 * w0).sqrt();
            // Each prototype pole maps to two band-pass poles; the conjugate
            // prototype pole supplies their conjugates, so keep the
            // upper-half-plane one from each candidate pair.
            for s in [half + disc, half - disc] {
                if s.im <= 0.0 {
                    continue;
                }
                let z = (fs2 + s) / (fs2 - s);
                let mut sec = Biquad { b: [1.0, 0.0, -1.0], a: [-2.0 * z.re, z.norm_sqr()] };
                let g = sec.response(z_inv_c).norm();
                for b in &mut sec.b {
                    *b /= g;
                }
                sections.push(sec);
            }
        }
        debug_assert_eq!(sections.len(), n);
        Ok(Self { sections, rate_hz })
    }

    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / self.rate_hz);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    /// Group delay in samples, from the phase slope of the response.
    pub fn group_delay_samples(&self, freq_hz: f64) -> f64 {
        let h = 1e-4;
        let dw = 2.0 * PI * h / self.rate_hz;
        let ratio = self.response(freq_hz + h) / self.response(freq_hz - h);
        -ratio.arg() / (2.0 * dw)
    }

    /// Geometric centre of the pass-band, Hz.
    pub fn centre_hz(spec: &BandpassSpec) -> f64 {
        (spec.low_hz * spec.high_hz).sqrt()
    }
}

/// Causal streaming filter for one channel.
#[derive(Debug, Clone)]
pub struct CausalFilter {
    sos: Arc<Sos>,
    state: Vec<[f64; 2]>,
}

impl CausalFilter {
    pub fn new(sos: Arc<Sos>) -> Self {
        let state = vec![[0.0; 2]; sos.sections.len()];
        Self { sos, state }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let mut v = x;
        for (sec, st) in self.sos.sections.iter().zip(self.state.iter_mut()) {
            let y = sec.b[0] * v + st[0];
            st[0] = sec.b[1] * v - sec.a[0] * y + st[1];
            st[1] = sec.b[2] * v - sec.a[1] * y;
            v = y;
        }
        v
    }

    pub fn process_block(&mut self, xs: &mut [f64]) {
        for x in xs {
            *x = self.process(*x);
        }
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = [0.0; 2]);
    }
}

/// One causal filter per channel.
#[derive(Debug, Clone)]
pub struct MultiChannelFilter {
    filters: Vec<CausalFilter>,
}

impl MultiChannelFilter {
    pub fn new(spec: &BandpassSpec, rate_hz: f64, channels: usize) -> Result<Self, DspError> {
        let sos = Arc::new(Sos::butterworth_bandpass(spec, rate_hz)?);
        Ok(Self { filters: (0..channels).map(|_| CausalFilter::new(sos.clone())).collect() })
    }

    pub fn process(&mut self, sample: &mut [f64]) {
        for (x, f) in sample.iter_mut().zip(&mut self.filters) {
            *x = f.process(*x);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterMode {
    /// Streaming, introduces the filter's group delay.
    Causal,
    /// Forward-backward; zero phase, squared magnitude. Offline only.
    ZeroPhase,
}

pub fn bandpass(signal: &[f64], spec: &BandpassSpec, rate_hz: f64, mode: FilterMode) -> Result<Vec<f64>, DspError> {
    let sos = Arc::new(Sos::butterworth_bandpass(spec, rate_hz)?);
    Ok(match mode {
        FilterMode::Causal => {
            let mut out = signal.to_vec();
            CausalFilter::new(sos).process_block(&mut out);
            out
        }
        FilterMode::ZeroPhase => filtfilt(sos, signal),
    })
}

/// Forward-backward filtering with odd-symmetric edge extension.
pub fn filtfilt(sos: Arc<Sos>, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = (3 * (2 * sos.sections.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let mut f = CausalFilter::new(sos);
    f.process_block(&mut ext);
    ext.reverse();
    f.reset();
    f.process_block(&mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}
