//! Synthetic headset: sensor streams generated from known cortical sources
//! through a forward model.
//!
//! Sample `k` has device time `t_k`; sources and cue envelopes are defined
//! on `k / true_rate`, so ground truth is independent of pacing. Frames
//! that carry an event marker are never dropped.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{BandpassSpec, CausalFilter, DspError, Sos};
use crate::event::{ClassLabel, EventMarker};
use crate::inverse::{ForwardModel, ROI_PRECENTRAL_LEFT, ROI_PRECENTRAL_RIGHT};
use crate::wire::{quality_channel_for, QualitySlot, RawFrame, StreamHeader, StreamWriter, WireError, COUNTER_MODULUS};

pub const DEFAULT_TRUE_RATE_HZ: f64 = 127.88;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("band {low_hz}-{high_hz} Hz is outside (0, {nyquist_hz}) Hz")]
    BandOutOfRange { low_hz: f64, high_hz: f64, nyquist_hz: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unknown scenario {0:?}; expected one of erd, ideal, lossy, compensated")]
    UnknownScenario(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How device sample times are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pacing {
    /// `t_k = k / true_rate`.
    Uniform,
    /// Samples are clocked at the nominal rate within each cycle of
    /// `period` samples; the cycle boundary absorbs the difference to the
    /// true rate.
    Compensated { period: usize },
}

/// Piecewise-linear gain over time relative to a cue, held constant
/// outside its breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub points: Vec<(f64, f64)>,
}

impl Envelope {
    /// Baseline 1, ramping to `depth` within 0.5 s of the cue, held for
    /// 3 s, and recovering over the following second.
    pub fn erd(depth: f64) -> Self {
        Self { points: vec![(-1.0, 1.0), (0.0, 1.0), (0.5, depth), (3.5, depth), (4.5, 1.0)] }
    }

    pub fn gain(&self, t: f64) -> f64 {
        let pts = &self.points;
        match pts.len() {
            0 => 1.0,
            _ if t <= pts[0].0 => pts[0].1,
            _ if t >= pts[pts.len() - 1].0 => pts[pts.len() - 1].1,
            _ => {
                let i = pts.partition_point(|p| p.0 <= t);
                let (t0, g0) = pts[i - 1];
                let (t1, g1) = pts[i];
                g0 + (g1 - g0) * (t - t0) / (t1 - t0)
            }
        }
    }

    /// Support outside of which the envelope is at its resting value.
    fn span(&self) -> (f64, f64) {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => (a.0, b.0),
            _ => (0.0, 0.0),
        }
    }
}

/// Modulation of a source following cues of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueResponse {
    pub class: ClassLabel,
    pub envelope: Envelope,
}

/// A coherent patch of vertices sharing one band-limited time course.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEvent {
    pub vertex_ids: Vec<usize>,
    pub band_hz: (f64, f64),
    /// RMS amplitude per vertex before modulation, nAm.
    pub amplitude_nam: f64,
    #[serde(default)]
    pub responses: Vec<CueResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialProtocol {
    pub n_trials: usize,
    pub classes: Vec<ClassLabel>,
    pub lead_in_s: f64,
    pub cue_s: f64,
    pub rest_min_s: f64,
    pub rest_max_s: f64,
}

impl TrialProtocol {
    pub fn new(n_trials: usize, classes: Vec<ClassLabel>) -> Self {
        Self { n_trials, classes, lead_in_s: 2.0, cue_s: 4.0, rest_min_s: 2.0, rest_max_s: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cue {
    pub time_s: f64,
    pub class: ClassLabel,
}

/// Cue schedule: each trial draws its class uniformly, shows the cue for
/// `cue_s`, then marks a Relax period of random length. The returned list
/// interleaves class cues and Relax markers in time order.
pub fn erd_trial_protocol(protocol: &TrialProtocol, seed: u64) -> Vec<Cue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut t = protocol.lead_in_s;
    let mut cues = Vec::with_capacity(2 * protocol.n_trials);
    if protocol.classes.is_empty() {
        return cues;
    }
    for _ in 0..protocol.n_trials {
        let class = protocol.classes[rng.random_range(0..protocol.classes.len())];
        cues.push(Cue { time_s: t, class });
        t += protocol.cue_s;
        cues.push(Cue { time_s: t, class: ClassLabel::Relax });
        t += rng.random_range(protocol.rest_min_s..=protocol.rest_max_s);
    }
    cues
}

/// Total length of a protocol run, with a 2 s tail after the last rest.
pub fn protocol_duration_s(cues: &[Cue], protocol: &TrialProtocol) -> f64 {
    cues.last().map(|c| c.time_s + protocol.rest_max_s + 2.0).unwrap_or(protocol.lead_in_s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub name: String,
    pub true_rate_hz: f64,
    pub drop_prob: f64,
    pub pacing: Pacing,
    pub noise_std_uv: f64,
    pub sources: Vec<SourceEvent>,
    pub protocol: Option<TrialProtocol>,
    /// Receive-time jitter, uniform in `[0, jitter_s)`.
    #[serde(default)]
    pub jitter_s: f64,
    pub seed: u64,
}

impl SimScenario {
    pub fn new(seed: u64) -> Self {
        Self {
            name: "custom".into(),
            true_rate_hz: DEFAULT_TRUE_RATE_HZ,
            drop_prob: 0.0,
            pacing: Pacing::Uniform,
            noise_std_uv: 2.0,
            sources: Vec::new(),
            protocol: None,
            jitter_s: 0.0,
            seed,
        }
    }

    /// Named presets: `erd` (cued alpha suppression over both precentral
    /// ROIs), `ideal`, `lossy` (1% drops) and `compensated` (32-sample
    /// pacing). The timing presets carry a steady alpha source in the left
    /// ROI.
    pub fn preset(name: &str, model: &ForwardModel, seed: u64, trials: usize) -> Result<Self, SimError> {
        let roi = |n: &str| -> Result<Vec<usize>, SimError> {
            model.roi(n).map(|v| v.to_vec()).map_err(|e| SimError::InvalidScenario(e.to_string()))
        };
        let mut s = SimScenario::new(seed);
        s.name = name.to_string();
        let steady = |vertices: Vec<usize>| SourceEvent {
            vertex_ids: vertices,
            band_hz: (8.0, 13.0),
            amplitude_nam: 1.0,
            responses: Vec::new(),
        };
        match name {
            "erd" => {
                s.protocol = Some(TrialProtocol::new(trials, vec![ClassLabel::Left, ClassLabel::Right]));
                s.sources = erd_sources(roi(ROI_PRECENTRAL_LEFT)?, roi(ROI_PRECENTRAL_RIGHT)?, 0.3, 1.0);
            }
            "ideal" => s.sources = vec![steady(roi(ROI_PRECENTRAL_LEFT)?)],
            "lossy" => {
                s.drop_prob = 0.01;
                s.sources = vec![steady(roi(ROI_PRECENTRAL_LEFT)?)];
            }
            "compensated" => {
                s.pacing = Pacing::Compensated { period: 32 };
                s.sources = vec![steady(roi(ROI_PRECENTRAL_LEFT)?)];
            }
            other => return Err(SimError::UnknownScenario(other.to_string())),
        }
        Ok(s)
    }

    pub fn validate(&self, model: &ForwardModel) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if !(self.true_rate_hz.is_finite() && self.true_rate_hz > 0.0) {
            return bad(format!("true_rate_hz {} must be > 0", self.true_rate_hz));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return bad(format!("drop_prob {} must be in [0, 1)", self.drop_prob));
        }
        if !(self.noise_std_uv >= 0.0 && self.noise_std_uv.is_finite()) {
            return bad(format!("noise_std_uv {} must be >= 0", self.noise_std_uv));
        }
        if !(self.jitter_s >= 0.0 && self.jitter_s.is_finite()) {
            return bad(format!("jitter_s {} must be >= 0", self.jitter_s));
        }
        if let Pacing::Compensated { period } = self.pacing {
            if period < 2 {
                return bad(format!("compensation period {period} must be >= 2"));
            }
        }
        let nyquist = self.true_rate_hz / 2.0;
        for src in &self.sources {
            let (lo, hi) = src.band_hz;
            if !(lo > 0.0 && hi > lo && hi < nyquist) {
                return Err(SimError::BandOutOfRange { low_hz: lo, high_hz: hi, nyquist_hz: nyquist });
            }
            if let Some(&v) = src.vertex_ids.iter().find(|&&v| v >= model.n_sources()) {
                return bad(format!("source vertex {v} outside the {}-vertex mesh", model.n_sources()));
            }
        }
        Ok(())
    }

    pub fn header(&self, model: &ForwardModel) -> StreamHeader {
        let mut h = StreamHeader::with_channels(model.channel_labels.clone());
        h.device_id = format!("sbs-sim/{}/{}", self.name, self.seed);
        h.event_labels = ClassLabel::label_table();
        h
    }

    /// Device time of sample `k`, seconds.
    pub fn sample_time_s(&self, k: u64, nominal_rate_hz: f64) -> f64 {
        match self.pacing {
            Pacing::Uniform => k as f64 / self.true_rate_hz,
            Pacing::Compensated { period } => {
                let p = period as u64;
                (k / p) as f64 * period as f64 / self.true_rate_hz + (k % p) as f64 / nominal_rate_hz
            }
        }
    }
}

/// Contralateral-dominant ERD: each ROI is suppressed to `depth` after
/// cues for the opposite hand and half as much after cues for the same
/// hand.
pub fn erd_sources(left_roi: Vec<usize>, right_roi: Vec<usize>, depth: f64, amplitude_nam: f64) -> Vec<SourceEvent> {
    let shallow = 1.0 - (1.0 - depth) / 2.0;
    let patch = |vertices: Vec<usize>, contra: ClassLabel, ipsi: ClassLabel| SourceEvent {
        vertex_ids: vertices,
        band_hz: (8.0, 13.0),
        amplitude_nam,
        responses: vec![
            CueResponse { class: contra, envelope: Envelope::erd(depth) },
            CueResponse { class: ipsi, envelope: Envelope::erd(shallow) },
        ],
    };
    vec![
        patch(left_roi, ClassLabel::Right, ClassLabel::Left),
        patch(right_roi, ClassLabel::Left, ClassLabel::Right),
    ]
}

/// What was injected, written next to the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: SimScenario,
    pub n_samples: u64,
    pub sample_rate_hz: f64,
    /// Per source, modulated amplitude per vertex in nAm, one value per
    /// sample (dropped samples included).
    pub source_time_courses: Vec<Vec<f64>>,
    pub events: Vec<EventMarker>,
    pub dropped_samples: Vec<u64>,
}

impl GroundTruth {
    pub fn packets_dropped(&self) -> u64 {
        self.dropped_samples.len() as u64
    }

    /// Source vector `s_k` (N_d).
    pub fn source_vector(&self, k: usize, n_sources: usize) -> DVector<f64> {
        let mut s = DVector::zeros(n_sources);
        for (src, course) in self.scenario.sources.iter().zip(&self.source_time_courses) {
            for &v in &src.vertex_ids {
                s[v] += course[k];
            }
        }
        s
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), SimError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, self)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, SimError> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }
}

/// Sidecar path for a stream: `run.sbsr` -> `run.truth.json`.
pub fn truth_path(stream: &std::path::Path) -> std::path::PathBuf {
    stream.with_extension("truth.json")
}

/// Unit-RMS band-limited Gaussian noise.
fn band_limited_noise(rng: &mut ChaCha8Rng, n: usize, band: (f64, f64), rate_hz: f64) -> Result<Vec<f64>, SimError> {
    let spec = BandpassSpec::new(band.0, band.1, 4);
    let mut filter = CausalFilter::new(Arc::new(Sos::butterworth_bandpass(&spec, rate_hz)?));
    let warmup = (4.0 * rate_hz) as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..warmup + n {
        let y = filter.process(StandardNormal.sample(rng));
        if i >= warmup {
            out.push(y);
        }
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    Ok(out)
}

/// Generates a stream of `duration_s` seconds (or the protocol length, if
/// the scenario has one) and writes it to `out`.
pub fn generate_stream<W: Write>(
    scenario: &SimScenario,
    model: &ForwardModel,
    duration_s: Option<f64>,
    out: W,
) -> Result<GroundTruth, SimError> {
    scenario.validate(model)?;
    let cues = scenario.protocol.as_ref().map(|p| erd_trial_protocol(p, scenario.seed)).unwrap_or_default();
    let duration = match (duration_s, &scenario.protocol) {
        (Some(d), _) => d,
        (None, Some(p)) => protocol_duration_s(&cues, p),
        (None, None) => return Err(SimError::InvalidScenario("duration required without a trial protocol".into())),
    };
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(SimError::InvalidScenario(format!("duration {duration} s must be > 0")));
    }
    let n = (duration * scenario.true_rate_hz).round() as u64;
    generate_samples(scenario, model, n, &cues, out)
}

/// Generates exactly `n_samples` device samples (before drops).
pub fn generate_samples<W: Write>(
    scenario: &SimScenario,
    model: &ForwardModel,
    n_samples: u64,
    cues: &[Cue],
    out: W,
) -> Result<GroundTruth, SimError> {
    scenario.validate(model)?;
    let header = scenario.header(model);
    let rate = scenario.true_rate_hz;
    let n = n_samples as usize;
    let nc = model.n_channels();

    // Independent streams so that changing one knob does not reshuffle the
    // others.
    let rng_for = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(scenario.seed);
        r.set_stream(stream);
        r
    };
    let mut source_rng = rng_for(0);
    let mut noise_rng = rng_for(1);
    let mut drop_rng = rng_for(2);
    let mut jitter_rng = rng_for(4);

    let cue_samples: Vec<(u64, Cue)> = cues.iter().map(|c| ((c.time_s * rate).round() as u64, *c)).collect();

    let mut courses = Vec::with_capacity(scenario.sources.len());
    let mut patterns = Vec::with_capacity(scenario.sources.len());
    for src in &scenario.sources {
        let mut x = band_limited_noise(&mut source_rng, n, src.band_hz, rate)?;
        for (k, v) in x.iter_mut().enumerate() {
            *v *= src.amplitude_nam * modulation(src, cues, k as f64 / rate);
        }
        courses.push(x);
        let mut pattern = DVector::zeros(nc);
        for &v in &src.vertex_ids {
            pattern += model.gain.column(v);
        }
        patterns.push(pattern);
    }

    let noise = Normal::new(0.0, scenario.noise_std_uv).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    let mut writer = StreamWriter::new(header.clone(), out)?;
    let mut events = Vec::new();
    let mut dropped = Vec::new();
    let mut cue_iter = cue_samples.iter().peekable();
    let mut y = vec![0.0; nc];
    for k in 0..n {
        for (c, yc) in y.iter_mut().enumerate() {
            let clean: f64 = patterns.iter().zip(&courses).map(|(p, x)| p[c] * x[k]).sum();
            *yc = clean + noise.sample(&mut noise_rng);
        }
        let mut event = 0u8;
        while let Some((s, cue)) = cue_iter.peek() {
            if *s > k as u64 {
                break;
            }
            event = cue.class.code();
            events.push(EventMarker {
                sample: k as u64,
                code: event,
                label: cue.class.name().to_string(),
                stream_time_ns: 0,
            });
            cue_iter.next();
        }
        let drop_draw: f64 = drop_rng.random();
        let jitter: f64 = if scenario.jitter_s > 0.0 { jitter_rng.random::<f64>() * scenario.jitter_s } else { 0.0 };
        let stamp_ns = ((scenario.sample_time_s(k as u64, header.nominal_rate_hz) + jitter) * 1e9).round() as u64;
        if let Some(e) = events.last_mut().filter(|e| e.sample == k as u64) {
            e.stream_time_ns = stamp_ns;
        }
        if event == 0 && drop_draw < scenario.drop_prob {
            dropped.push(k as u64);
            continue;
        }
        let quality_channel = quality_channel_for(k as u64, nc);
        let frame = RawFrame {
            counter: (k as u64 % COUNTER_MODULUS as u64) as u8,
            event,
            quality: Some(QualitySlot { channel: quality_channel, value: quality_value(k as u64) }),
            stamp_ns,
            samples: y.iter().map(|&v| header.to_raw(v)).collect(),
        };
        writer.write_frame(&frame)?;
    }
    writer.flush()?;
    Ok(GroundTruth {
        scenario: scenario.clone(),
        n_samples,
        sample_rate_hz: rate,
        source_time_courses: courses,
        events,
        dropped_samples: dropped,
    })
}

/// Quality readings wander slowly around a good contact value.
fn quality_value(k: u64) -> u16 {
    (600.0 + 80.0 * (k as f64 * 0.003).sin()) as u16
}

/// Product of the envelopes of all cues whose support covers `t`.
fn modulation(src: &SourceEvent, cues: &[Cue], t: f64) -> f64 {
    let mut g = 1.0;
    for resp in &src.responses {
        let (lo, hi) = resp.envelope.span();
        for cue in cues.iter().filter(|c| c.class == resp.class) {
            let dt = t - cue.time_s;
            if dt >= lo && dt <= hi {
                g *= resp.envelope.gain(dt);
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{detect_gaps, PacketReader, Clocking};
    use crate::inverse::{synthetic_head, HeadGeometry};

    fn small_model() -> ForwardModel {
        synthetic_head(&HeadGeometry { n_vertices: 120, ..HeadGeometry::default() })
    }

    fn read_all(bytes: &[u8]) -> (StreamHeader, Vec<crate::wire::EegPacket>) {
        let reader = PacketReader::new(bytes, Clocking::Recorded { speed: 0.0 }).unwrap();
        let header = reader.header().clone();
        (header, reader.packets().map(|p| p.unwrap()).collect())
    }

    #[test]
    fn envelope_interpolates() {
        let e = Envelope::erd(0.3);
        assert_eq!(e.gain(-5.0), 1.0);
        assert!((e.gain(0.25) - 0.65).abs() < 1e-12);
        assert!((e.gain(2.0) - 0.3).abs() < 1e-12);
        assert_eq!(e.gain(9.0), 1.0);
    }

    #[test]
    fn protocol_is_seeded() {
        let p = TrialProtocol::new(2, vec![ClassLabel::Left, ClassLabel::Right]);
        assert_eq!(erd_trial_protocol(&p, 9), erd_trial_protocol(&p, 9));
        let cues = erd_trial_protocol(&TrialProtocol::new(200, vec![ClassLabel::Left, ClassLabel::Right]), 1);
        let n_cues = cues.iter().filter(|c| c.class != ClassLabel::Relax).count();
        assert_eq!(n_cues, 200);
        let left = cues.iter().filter(|c| c.class == ClassLabel::Left).count() as f64;
        // Binomial(200, 0.5) 99% band: 100 ± 2.576·√50.
        assert!((left - 100.0).abs() <= 2.576 * 50f64.sqrt(), "{left}");
        assert!(cues.windows(2).all(|w| w[1].time_s > w[0].time_s));
    }

    #[test]
    fn noiseless_stream_is_forward_model_output() {
        let model = small_model();
        let mut s = SimScenario::new(4);
        s.noise_std_uv = 0.0;
        s.sources = vec![SourceEvent { vertex_ids: vec![7], band_hz: (8.0, 13.0), amplitude_nam: 20.0, responses: vec![] }];
        let mut bytes = Vec::new();
        let truth = generate_stream(&s, &model, Some(3.0), &mut bytes).unwrap();
        let (header, packets) = read_all(&bytes);
        assert_eq!(packets.len() as u64, truth.n_samples);
        for (k, p) in packets.iter().enumerate() {
            let want = &model.gain * truth.source_vector(k, model.n_sources());
            for c in 0..model.n_channels() {
                assert!((p.values_uv[c] - want[c]).abs() <= header.adc_scale / 2.0 + 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_bytes() {
        let model = small_model();
        let s = SimScenario::preset("lossy", &model, 11, 0).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate_stream(&s, &model, Some(5.0), &mut a).unwrap();
        generate_stream(&s, &model, Some(5.0), &mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        generate_stream(&SimScenario { seed: 12, ..s }, &model, Some(5.0), &mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn drop_accounting() {
        let model = small_model();
        let mut s = SimScenario::preset("ideal", &model, 1, 0).unwrap();
        let mut bytes = Vec::new();
        generate_stream(&s, &model, Some(20.0), &mut bytes).unwrap();
        let counters: Vec<u8> = read_all(&bytes).1.iter().map(|p| p.counter).collect();
        assert_eq!(detect_gaps(&counters).iter().sum::<u64>(), 0);

        s.drop_prob = 0.05;
        bytes.clear();
        let truth = generate_stream(&s, &model, Some(20.0), &mut bytes).unwrap();
        let counters: Vec<u8> = read_all(&bytes).1.iter().map(|p| p.counter).collect();
        assert!(truth.packets_dropped() > 0);
        // Only losses between the first and last delivered sample leave a
        // trace in the counters.
        let delivered = truth.n_samples - truth.packets_dropped();
        assert_eq!(delivered as usize, counters.len());
        let first = (0..).find(|k| !truth.dropped_samples.contains(k)).unwrap();
        let last = (0..truth.n_samples).rev().find(|k| !truth.dropped_samples.contains(k)).unwrap();
        let interior = truth.dropped_samples.iter().filter(|&&k| k > first && k < last).count() as u64;
        assert_eq!(detect_gaps(&counters).iter().sum::<u64>(), interior);
    }

    #[test]
    fn band_checked() {
        let model = small_model();
        let mut s = SimScenario::new(0);
        s.sources = vec![SourceEvent { vertex_ids: vec![0], band_hz: (8.0, 70.0), amplitude_nam: 1.0, responses: vec![] }];
        assert!(matches!(generate_stream(&s, &model, Some(1.0), Vec::new()), Err(SimError::BandOutOfRange { .. })));
    }

    #[test]
    fn compensated_pacing_times() {
        let mut s = SimScenario::new(0);
        s.pacing = Pacing::Compensated { period: 32 };
        assert_eq!(s.sample_time_s(1, 128.0), 1.0 / 128.0);
        assert!((s.sample_time_s(32, 128.0) - 32.0 / 127.88).abs() < 1e-15);
        assert!((s.sample_time_s(64, 128.0) - 64.0 / 127.88).abs() < 1e-15);
    }

    #[test]
    fn erd_events_embedded() {
        let model = small_model();
        let s = SimScenario::preset("erd", &model, 5, 6).unwrap();
        let mut bytes = Vec::new();
        let truth = generate_stream(&s, &model, None, &mut bytes).unwrap();
        assert_eq!(truth.events.len(), 12);
        let (_, packets) = read_all(&bytes);
        let embedded: Vec<u8> = packets.iter().filter(|p| p.event != 0).map(|p| p.event).collect();
        assert_eq!(embedded, truth.events.iter().map(|e| e.code).collect::<Vec<_>>());
    }
}
