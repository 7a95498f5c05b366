//! Streaming reconstruction: causal band-pass at the sensors, Bayesian
//! inverse with periodic hyperparameter adaptation, and sliding-window
//! ROI power.
//!
//! Samples are processed in hops. When a hop is complete its posterior
//! is computed for the ROI vertices only, each sample's instantaneous ROI
//! power enters a moving average, and one [`RoiSample`] per input sample
//! is emitted. The first adaptation waits for one full adaptation window,
//! so output starts after that delay. Dropped packets are filled by holding the previous value so
//! sample indices stay on the device grid.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{BandpassSpec, DspError, MultiChannelFilter};
use crate::event::{ClassLabel, EventMarker};
use crate::ingest::{dropped_between, monotonic_ns, IngestError, SourceSpec};
use crate::inverse::{
    synthetic_head_with_channels, trial_average, AdaptOptions, ForwardModel, HeadGeometry, InverseError,
    InverseState, MovingAverage, PriorKind, SpatialPrior, SpectralSolver, TrialAverage, ROI_PRECENTRAL_LEFT,
    ROI_PRECENTRAL_RIGHT,
};
use crate::simulate::{generate_stream, GroundTruth, SimError, SimScenario};
use crate::wire::{EegPacket, StreamHeader};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error(transparent)]
    Inverse(#[from] InverseError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Net(#[from] crate::netstream::NetError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    fn config(field: &str, reason: impl Into<String>) -> Self {
        PipelineError::Config { field: field.to_string(), reason: reason.into() }
    }

    /// True for errors caused by the configuration rather than the data.
    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config { .. } | PipelineError::Inverse(InverseError::UnknownRoi(_)))
    }
}

/// Simulator settings used when the source is `sim:SCENARIO`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    pub trials: usize,
    /// Stream length for scenarios without a trial protocol.
    pub duration_s: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { trials: 200, duration_s: 600.0 }
    }
}

/// Where results go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Per-sample ROI power.
    pub roi_csv: bool,
    /// Trial-averaged ROI power per cue class, as CSV and SVG.
    pub trial_average: bool,
    /// Optional `HOST:PORT` to publish ROI power and events on.
    pub serve: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, roi_csv: true, trial_average: true, serve: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// `file:PATH`, `tcp:HOST:PORT` or `sim:SCENARIO`.
    pub source: String,
    /// Replay speed for file sources; 0 is as fast as possible.
    pub speed: f64,
    pub band: BandpassSpec,
    pub prior: PriorKind,
    /// Forward model file; a synthetic head is built when absent.
    pub model: Option<PathBuf>,
    pub head: HeadGeometry,
    pub hop_samples: usize,
    pub adapt_every_samples: usize,
    pub adapt: AdaptOptions,
    /// Options for the first adaptation, which starts from a crude guess.
    pub warmup_adapt: AdaptOptions,
    pub rois: Vec<String>,
    pub power_window_s: f64,
    /// Trial-average window around each cue.
    pub epoch_pre_s: f64,
    pub epoch_post_s: f64,
    /// Averages use at most this many cues per class, earliest first.
    pub max_trials: Option<usize>,
    /// Windows, relative to the cue, compared in the suppression summary.
    pub baseline_window_s: (f64, f64),
    pub response_window_s: (f64, f64),
    /// Interval for stream statistics in the log; 0 disables them.
    pub stats_every_s: f64,
    pub sim: SimOptions,
    pub outputs: OutputConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source: "sim:erd".into(),
            speed: 0.0,
            band: BandpassSpec::alpha(),
            prior: PriorKind::default(),
            model: None,
            head: HeadGeometry::default(),
            hop_samples: 8,
            adapt_every_samples: 128,
            adapt: AdaptOptions::default(),
            warmup_adapt: AdaptOptions { max_iters: 20_000, tol: 1e-7 },
            rois: vec![ROI_PRECENTRAL_LEFT.into(), ROI_PRECENTRAL_RIGHT.into()],
            power_window_s: 0.5,
            epoch_pre_s: 1.5,
            epoch_post_s: 5.0,
            max_trials: None,
            baseline_window_s: (-1.5, 0.0),
            response_window_s: (1.0, 3.5),
            stats_every_s: 0.0,
            sim: SimOptions::default(),
            outputs: OutputConfig::default(),
            seed: 1,
        }
    }
}

impl PipelineConfig {
    pub fn source_spec(&self) -> Result<SourceSpec, PipelineError> {
        self.source.parse().map_err(|e: IngestError| PipelineError::config("source", e.to_string()))
    }

    /// Checks everything that can be checked without the stream.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.source_spec()?;
        if !(self.speed >= 0.0 && self.speed.is_finite()) {
            return Err(PipelineError::config("speed", format!("{} must be >= 0", self.speed)));
        }
        let b = &self.band;
        if !(b.low_hz > 0.0 && b.low_hz < b.high_hz && b.high_hz.is_finite() && b.order > 0) {
            return Err(PipelineError::config("band", format!("{}-{} Hz, order {} is not a band-pass", b.low_hz, b.high_hz, b.order)));
        }
        if let PriorKind::Loreta { smoothness } = self.prior {
            if !(smoothness >= 0.0 && smoothness.is_finite()) {
                return Err(PipelineError::config("prior.smoothness", format!("{smoothness} must be >= 0")));
            }
        }
        if self.hop_samples == 0 {
            return Err(PipelineError::config("hop_samples", "must be >= 1"));
        }
        if self.adapt_every_samples == 0 || self.adapt_every_samples % self.hop_samples != 0 {
            return Err(PipelineError::config(
                "adapt_every_samples",
                format!("{} must be a positive multiple of hop_samples ({})", self.adapt_every_samples, self.hop_samples),
            ));
        }
        if self.adapt.max_iters == 0 {
            return Err(PipelineError::config("adapt.max_iters", "must be >= 1"));
        }
        if !(self.adapt.tol > 0.0 && self.adapt.tol.is_finite()) {
            return Err(PipelineError::config("adapt.tol", format!("{} must be > 0", self.adapt.tol)));
        }
        if self.warmup_adapt.max_iters == 0 {
            return Err(PipelineError::config("warmup_adapt.max_iters", "must be >= 1"));
        }
        if !(self.warmup_adapt.tol > 0.0 && self.warmup_adapt.tol.is_finite()) {
            return Err(PipelineError::config("warmup_adapt.tol", format!("{} must be > 0", self.warmup_adapt.tol)));
        }
        if self.rois.is_empty() {
            return Err(PipelineError::config("rois", "at least one ROI is required"));
        }
        if !(self.power_window_s > 0.0 && self.power_window_s.is_finite()) {
            return Err(PipelineError::config("power_window_s", format!("{} must be > 0", self.power_window_s)));
        }
        if !(self.epoch_pre_s >= 0.0 && self.epoch_post_s > 0.0) {
            return Err(PipelineError::config("epoch_pre_s", "epoch window must satisfy pre >= 0 and post > 0"));
        }
        for (field, (a, b)) in [("baseline_window_s", self.baseline_window_s), ("response_window_s", self.response_window_s)] {
            if !(a < b && a >= -self.epoch_pre_s && b <= self.epoch_post_s) {
                return Err(PipelineError::config(
                    field,
                    format!("({a}, {b}) must be increasing and inside the epoch (-{}, {})", self.epoch_pre_s, self.epoch_post_s),
                ));
            }
        }
        if !(self.stats_every_s >= 0.0 && self.stats_every_s.is_finite()) {
            return Err(PipelineError::config("stats_every_s", format!("{} must be >= 0", self.stats_every_s)));
        }
        if self.max_trials.is_some_and(|n| n < 2) {
            return Err(PipelineError::config("max_trials", "must be >= 2"));
        }
        if self.model.is_none() && self.head.n_vertices < 2 {
            return Err(PipelineError::config("head.n_vertices", "must be >= 2"));
        }
        if self.model.is_none() {
            self.head.validate().map_err(|(field, reason)| PipelineError::config(&field, reason))?;
        }
        Ok(())
    }

    /// Forward model matching the stream's channels: loaded from
    /// `model` or synthesized from `head`.
    pub fn forward_model(&self, header: &StreamHeader) -> Result<ForwardModel, PipelineError> {
        let model = match &self.model {
            Some(path) => ForwardModel::load(path)?,
            None => synthetic_head_with_channels(&self.head, &header.channel_names),
        };
        if model.channel_labels == header.channel_names {
            Ok(model)
        } else {
            Ok(model.select_channels(&header.channel_names)?)
        }
    }

    pub fn solver(&self, model: &ForwardModel) -> Result<SpectralSolver, PipelineError> {
        let prior = SpatialPrior::from_kind(self.prior, &model.adjacency)?;
        Ok(SpectralSolver::new(&model.gain, &prior)?)
    }
}

/// Simulates `sim:SCENARIO` into memory. The stream length comes from the
/// trial protocol, or from `sim.duration_s` for protocol-free scenarios.
pub fn simulate_source(
    scenario: &str,
    config: &PipelineConfig,
    model: &ForwardModel,
) -> Result<(Vec<u8>, GroundTruth), PipelineError> {
    let s = SimScenario::preset(scenario, model, config.seed, config.sim.trials)?;
    let duration = s.protocol.is_none().then_some(config.sim.duration_s);
    let mut bytes = Vec::new();
    let truth = generate_stream(&s, model, duration, &mut bytes)?;
    Ok((bytes, truth))
}

/// Smoothed power of each configured ROI at one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSample {
    /// Index on the gap-filled sample grid.
    pub sample: u64,
    pub recv_time_ns: u64,
    /// Monotonic time at which the sample entered the pipeline.
    pub arrival_ns: u64,
    pub filled: bool,
    pub powers: Vec<f64>,
}

/// Counters describing the adaptation history.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptStats {
    pub runs: u64,
    pub converged: u64,
    pub failures: u64,
}

struct Pending {
    sample: u64,
    recv_time_ns: u64,
    arrival_ns: u64,
    filled: bool,
}

pub struct ReconstructionPipeline {
    solver: Arc<SpectralSolver>,
    rois: Vec<String>,
    rows: Vec<usize>,
    spans: Vec<(usize, usize)>,
    filter: MultiChannelFilter,
    nc: usize,
    hop: usize,
    adapt_every: usize,
    adapt_opts: AdaptOptions,
    warmup_opts: AdaptOptions,
    pending: Vec<f64>,
    pending_meta: Vec<Pending>,
    history: VecDeque<Vec<f64>>,
    state: Option<InverseState>,
    averagers: Vec<MovingAverage>,
    next_sample: u64,
    last: Option<(u8, Vec<f64>)>,
    filled: u64,
    events: Vec<EventMarker>,
    labels: BTreeMap<u8, String>,
    rate_hz: f64,
    adapt_stats: AdaptStats,
}

impl ReconstructionPipeline {
    pub fn new(config: &PipelineConfig, model: &ForwardModel, header: &StreamHeader) -> Result<Self, PipelineError> {
        let solver = Arc::new(config.solver(model)?);
        Self::with_solver(config, solver, model, header)
    }

    /// Builds a pipeline around an already factorized solver for `model`.
    pub fn with_solver(
        config: &PipelineConfig,
        solver: Arc<SpectralSolver>,
        model: &ForwardModel,
        header: &StreamHeader,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        if model.channel_labels != header.channel_names {
            return Err(PipelineError::Inverse(InverseError::DimensionMismatch(
                "forward model channels differ from the stream's".into(),
            )));
        }
        if solver.n_channels() != model.n_channels() || solver.n_sources() != model.n_sources() {
            return Err(PipelineError::Inverse(InverseError::DimensionMismatch("solver built for another model".into())));
        }
        let rate = header.nominal_rate_hz;
        config.band.validate(rate).map_err(|e| PipelineError::config("band", e.to_string()))?;
        let mut rows = Vec::new();
        let mut spans = Vec::new();
        for name in &config.rois {
            let v = model.roi(name)?;
            spans.push((rows.len(), rows.len() + v.len()));
            rows.extend_from_slice(v);
        }
        let window = ((config.power_window_s * rate).round() as usize).max(1);
        let nc = header.channel_count;
        Ok(Self {
            solver,
            rois: config.rois.clone(),
            rows,
            spans,
            filter: MultiChannelFilter::new(&config.band, rate, nc)?,
            nc,
            hop: config.hop_samples,
            adapt_every: config.adapt_every_samples,
            adapt_opts: config.adapt,
            warmup_opts: config.warmup_adapt,
            pending: Vec::with_capacity(nc * config.hop_samples),
            pending_meta: Vec::with_capacity(config.hop_samples),
            history: VecDeque::with_capacity(config.adapt_every_samples),
            state: None,
            averagers: config.rois.iter().map(|_| MovingAverage::new(window)).collect(),
            next_sample: 0,
            last: None,
            filled: 0,
            events: Vec::new(),
            labels: header.event_labels.clone(),
            rate_hz: rate,
            adapt_stats: AdaptStats::default(),
        })
    }

    pub fn rois(&self) -> &[String] {
        &self.rois
    }

    pub fn state(&self) -> Option<&InverseState> {
        self.state.as_ref()
    }

    pub fn events(&self) -> &[EventMarker] {
        &self.events
    }

    pub fn filled_samples(&self) -> u64 {
        self.filled
    }

    pub fn adapt_stats(&self) -> AdaptStats {
        self.adapt_stats
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    /// Feeds one packet; returns the ROI samples completed by it.
    pub fn push(&mut self, packet: &EegPacket) -> Result<Vec<RoiSample>, PipelineError> {
        if packet.values_uv.len() != self.nc {
            return Err(PipelineError::Inverse(InverseError::DimensionMismatch(format!(
                "packet has {} channels, stream declares {}",
                packet.values_uv.len(),
                self.nc
            ))));
        }
        let arrival = monotonic_ns();
        let mut out = Vec::new();
        if let Some((prev, held)) = self.last.take() {
            let gap = dropped_between(prev, packet.counter);
            for _ in 0..gap {
                self.filled += 1;
                self.ingest(&held, packet.recv_time_ns, arrival, true, &mut out)?;
            }
        }
        if packet.event != 0 {
            let label = self.labels.get(&packet.event).cloned().unwrap_or_else(|| format!("event{}", packet.event));
            self.events.push(EventMarker {
                sample: self.next_sample,
                code: packet.event,
                label,
                stream_time_ns: packet.recv_time_ns,
            });
        }
        self.ingest(&packet.values_uv, packet.recv_time_ns, arrival, false, &mut out)?;
        self.last = Some((packet.counter, packet.values_uv.clone()));
        Ok(out)
    }

    /// Processes a trailing partial hop.
    pub fn finish(&mut self) -> Result<Vec<RoiSample>, PipelineError> {
        let mut out = Vec::new();
        if !self.pending_meta.is_empty() {
            self.process_hop(&mut out)?;
        }
        Ok(out)
    }

    fn ingest(&mut self, values: &[f64], recv: u64, arrival: u64, filled: bool, out: &mut Vec<RoiSample>) -> Result<(), PipelineError> {
        let mut x = values.to_vec();
        self.filter.process(&mut x);
        if self.history.len() == self.adapt_every {
            self.history.pop_front();
        }
        self.history.push_back(x.clone());
        self.pending.extend_from_slice(&x);
        self.pending_meta.push(Pending { sample: self.next_sample, recv_time_ns: recv, arrival_ns: arrival, filled });
        self.next_sample += 1;
        // The first adaptation waits for a full history; until then hops
        // are held back.
        let ready = self.state.is_some() || self.history.len() == self.adapt_every;
        if self.pending_meta.len() >= self.hop && ready {
            self.process_hop(out)?;
        }
        Ok(())
    }

    fn adapt_on_history(&mut self) {
        let n = self.history.len();
        let frame = DMatrix::from_iterator(self.nc, n, self.history.iter().flatten().copied());
        let warm = self.state.is_none();
        let state = match self.state.take() {
            Some(s) => s,
            None => match self.solver.initial_state(&frame) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("cannot initialize hyperparameters: {e}");
                    self.adapt_stats.failures += 1;
                    return;
                }
            },
        };
        let mut next = state.clone();
        next.evidence_history.clear();
        self.adapt_stats.runs += 1;
        let opts = if warm { self.warmup_opts } else { self.adapt_opts };
        match self.solver.adapt(&frame, &mut next, &opts) {
            Ok(r) => {
                self.adapt_stats.converged += r.converged as u64;
                self.state = Some(next);
            }
            Err(e) => {
                log::warn!("hyperparameter update skipped: {e}");
                self.adapt_stats.failures += 1;
                self.state = Some(state);
            }
        }
    }

    fn process_hop(&mut self, out: &mut Vec<RoiSample>) -> Result<(), PipelineError> {
        let end = self.next_sample;
        if self.state.is_none() || end % self.adapt_every as u64 == 0 {
            self.adapt_on_history();
        }
        let n = self.pending_meta.len();
        let frame = DMatrix::from_column_slice(self.nc, n, &self.pending);
        let means = match &self.state {
            Some(state) => self.solver.posterior_rows(&frame, state, &self.rows)?,
            None => DMatrix::zeros(self.rows.len(), n),
        };
        for (t, meta) in self.pending_meta.drain(..).enumerate() {
            let col = means.column(t);
            let powers = self
                .spans
                .iter()
                .zip(&mut self.averagers)
                .map(|(&(a, b), avg)| {
                    let p = if b > a { col.rows(a, b - a).norm_squared() / (b - a) as f64 } else { 0.0 };
                    avg.push(p)
                })
                .collect();
            out.push(RoiSample {
                sample: meta.sample,
                recv_time_ns: meta.recv_time_ns,
                arrival_ns: meta.arrival_ns,
                filled: meta.filled,
                powers,
            });
        }
        self.pending.clear();
        Ok(())
    }
}

/// Everything an offline reconstruction produced.
#[derive(Debug, Clone)]
pub struct ReconstructionRun {
    pub rois: Vec<String>,
    pub rate_hz: f64,
    pub samples: Vec<RoiSample>,
    pub events: Vec<EventMarker>,
    pub packets: u64,
    pub filled: u64,
    pub final_state: Option<InverseState>,
    pub adapt_stats: AdaptStats,
}

/// Runs the pipeline over a whole packet sequence.
pub fn run_reconstruction<I>(mut pipeline: ReconstructionPipeline, packets: I) -> Result<ReconstructionRun, PipelineError>
where
    I: IntoIterator<Item = Result<EegPacket, IngestError>>,
{
    let mut samples = Vec::new();
    let mut count = 0u64;
    for p in packets {
        samples.extend(pipeline.push(&p?)?);
        count += 1;
    }
    samples.extend(pipeline.finish()?);
    Ok(ReconstructionRun {
        rois: pipeline.rois.clone(),
        rate_hz: pipeline.rate_hz,
        samples,
        events: pipeline.events.clone(),
        packets: count,
        filled: pipeline.filled,
        final_state: pipeline.state.clone(),
        adapt_stats: pipeline.adapt_stats,
    })
}

/// Trial-averaged ROI power for one cue class.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialCurves {
    pub class: ClassLabel,
    pub times_s: Vec<f64>,
    pub curves: Vec<(String, TrialAverage)>,
}

impl TrialCurves {
    /// Mean over `[start, end)` s of the named ROI's average curve.
    pub fn window_mean(&self, roi: &str, start_s: f64, end_s: f64) -> Option<f64> {
        let (_, avg) = self.curves.iter().find(|(n, _)| n == roi)?;
        Some(avg.mean_over(&self.times_s, start_s, end_s))
    }
}

impl ReconstructionRun {
    /// One row per sample: `sample,time_s,<roi>...`, time on the nominal
    /// grid so the file depends only on the stream contents.
    pub fn write_roi_csv<W: Write>(&self, w: W) -> Result<(), PipelineError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["sample".to_string(), "time_s".to_string()];
        header.extend(self.rois.iter().cloned());
        out.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![s.sample.to_string(), (s.sample as f64 / self.rate_hz).to_string()];
            row.extend(s.powers.iter().map(|p| p.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Power curves locked to the cues of `class`, averaged over at most
    /// `limit` trials. Cues too close to either end of the run are skipped.
    pub fn trial_curves(
        &self,
        class: ClassLabel,
        pre_s: f64,
        post_s: f64,
        limit: Option<usize>,
    ) -> Result<TrialCurves, PipelineError> {
        let pre = (pre_s * self.rate_hz).round() as usize;
        let post = (post_s * self.rate_hz).round() as usize;
        let n = self.samples.len();
        let starts: Vec<usize> = self
            .events
            .iter()
            .filter(|e| e.class() == Some(class))
            .filter_map(|e| {
                let s = e.sample as usize;
                (s >= pre && s + post <= n).then(|| s - pre)
            })
            .take(limit.unwrap_or(usize::MAX))
            .collect();
        let times_s = (0..pre + post).map(|i| (i as f64 - pre as f64) / self.rate_hz).collect();
        let mut curves = Vec::with_capacity(self.rois.len());
        for (r, name) in self.rois.iter().enumerate() {
            let trials: Vec<Vec<f64>> =
                starts.iter().map(|&s| self.samples[s..s + pre + post].iter().map(|x| x.powers[r]).collect()).collect();
            curves.push((name.clone(), trial_average(&trials)?));
        }
        Ok(TrialCurves { class, times_s, curves })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Clocking, PacketReader};
    use crate::inverse::{synthetic_head, HeadGeometry};
    use crate::simulate::SimScenario;

    fn small_head() -> HeadGeometry {
        HeadGeometry { n_vertices: 200, ..HeadGeometry::default() }
    }

    fn small_config() -> PipelineConfig {
        PipelineConfig { head: small_head(), ..PipelineConfig::default() }
    }

    fn stream(scenario: &SimScenario, model: &ForwardModel, secs: f64) -> (StreamHeader, Vec<EegPacket>) {
        let mut bytes = Vec::new();
        generate_stream(scenario, model, Some(secs), &mut bytes).unwrap();
        let reader = PacketReader::new(&bytes[..], Clocking::Recorded { speed: 0.0 }).unwrap();
        let header = reader.header().clone();
        (header, reader.packets().map(|p| p.unwrap()).collect())
    }

    #[test]
    fn config_errors_name_the_field() {
        let cases: Vec<(&str, Box<dyn Fn(&mut PipelineConfig)>)> = vec![
            ("source", Box::new(|c| c.source = "usb:1".into())),
            ("speed", Box::new(|c| c.speed = -1.0)),
            ("band", Box::new(|c| c.band.low_hz = 20.0)),
            ("hop_samples", Box::new(|c| c.hop_samples = 0)),
            ("adapt_every_samples", Box::new(|c| c.adapt_every_samples = 100)),
            ("adapt.tol", Box::new(|c| c.adapt.tol = 0.0)),
            ("rois", Box::new(|c| c.rois.clear())),
            ("power_window_s", Box::new(|c| c.power_window_s = 0.0)),
            ("prior.smoothness", Box::new(|c| c.prior = PriorKind::Loreta { smoothness: -1.0 })),
            ("head.shells[1].conductivity_s_per_m", Box::new(|c| c.head.shells[1].conductivity_s_per_m = 0.0)),
        ];
        for (field, mutate) in cases {
            let mut c = PipelineConfig::default();
            mutate(&mut c);
            match c.validate() {
                Err(PipelineError::Config { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{field}: {other:?}"),
            }
        }
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn config_json_round_trip_and_strictness() {
        let c = small_config();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&s).unwrap(), c);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"hop": 3}"#).is_err());
        let partial: PipelineConfig = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.hop_samples, 8);
    }

    #[test]
    fn unknown_roi_is_a_config_error() {
        let model = synthetic_head(&small_head());
        let header = StreamHeader::with_channels(model.channel_labels.clone());
        let cfg = PipelineConfig { rois: vec!["Cuneus".into()], ..small_config() };
        let err = ReconstructionPipeline::new(&cfg, &model, &header).err().unwrap();
        assert!(err.is_config());
        assert!(err.to_string().contains("Cuneus"));
    }

    #[test]
    fn one_output_per_sample_including_fills() {
        let model = synthetic_head(&small_head());
        let mut scenario = SimScenario::preset("lossy", &model, 5, 0).unwrap();
        scenario.drop_prob = 0.05;
        let (header, packets) = stream(&scenario, &model, 20.0);
        let pipe = ReconstructionPipeline::new(&small_config(), &model, &header).unwrap();
        let run = run_reconstruction(pipe, packets.iter().cloned().map(Ok)).unwrap();
        assert!(run.filled > 0);
        assert_eq!(run.samples.len() as u64, run.packets + run.filled);
        assert!(run.samples.iter().enumerate().all(|(i, s)| s.sample == i as u64));
        assert_eq!(run.samples.iter().filter(|s| s.filled).count() as u64, run.filled);
        assert!(run.samples.iter().all(|s| s.powers.iter().all(|p| p.is_finite() && *p >= 0.0)));
        assert!(run.adapt_stats.runs >= run.samples.len() as u64 / 128);
    }

    #[test]
    fn zero_input_gives_zero_power() {
        let model = synthetic_head(&small_head());
        let header = StreamHeader::with_channels(model.channel_labels.clone());
        let mut pipe = ReconstructionPipeline::new(&small_config(), &model, &header).unwrap();
        let mut out = Vec::new();
        for k in 0..300u64 {
            let p = EegPacket {
                seq: k,
                values_uv: vec![0.0; model.n_channels()],
                counter: (k % 129) as u8,
                quality: None,
                event: 0,
                recv_time_ns: k * 7_812_500,
            };
            out.extend(pipe.push(&p).unwrap());
        }
        out.extend(pipe.finish().unwrap());
        assert_eq!(out.len(), 300);
        assert!(out.iter().all(|s| s.powers.iter().all(|&p| p == 0.0)));
    }

    #[test]
    fn left_source_dominates_left_roi() {
        let model = synthetic_head(&small_head());
        let mut scenario = SimScenario::preset("ideal", &model, 3, 0).unwrap();
        // The small test mesh has weak ROI patterns; keep the source well
        // above the noise.
        scenario.sources[0].amplitude_nam = 20.0;
        let (header, packets) = stream(&scenario, &model, 30.0);
        let pipe = ReconstructionPipeline::new(&small_config(), &model, &header).unwrap();
        let run = run_reconstruction(pipe, packets.into_iter().map(Ok)).unwrap();
        let tail = &run.samples[run.samples.len() / 4..];
        let mean = |r: usize| tail.iter().map(|s| s.powers[r]).sum::<f64>() / tail.len() as f64;
        let (left, right) = (mean(0), mean(1));
        assert!(left > 3.0 * right, "left {left} right {right}");
    }

    #[test]
    fn processing_is_deterministic_and_chunking_free() {
        let model = synthetic_head(&small_head());
        let scenario = SimScenario::preset("ideal", &model, 4, 0).unwrap();
        let (header, packets) = stream(&scenario, &model, 8.0);
        let cfg = small_config();
        let run = |ps: &[EegPacket]| {
            let pipe = ReconstructionPipeline::new(&cfg, &model, &header).unwrap();
            let r = run_reconstruction(pipe, ps.iter().cloned().map(Ok)).unwrap();
            let mut csv = Vec::new();
            r.write_roi_csv(&mut csv).unwrap();
            csv
        };
        let a = run(&packets);
        assert_eq!(a, run(&packets));
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("sample,time_s,PrecentralLeft,PrecentralRight\n"));
        assert_eq!(text.lines().count(), packets.len() + 1);
    }

    #[test]
    fn trial_curves_match_direct_slicing() {
        let rois = vec!["A".to_string()];
        let samples: Vec<RoiSample> = (0..100u64)
            .map(|k| RoiSample { sample: k, recv_time_ns: 0, arrival_ns: 0, filled: false, powers: vec![k as f64] })
            .collect();
        let ev = |s: u64, code: u8| EventMarker { sample: s, code, label: String::new(), stream_time_ns: 0 };
        let run = ReconstructionRun {
            rois,
            rate_hz: 10.0,
            samples,
            events: vec![ev(1, 2), ev(20, 2), ev(50, 1), ev(60, 2), ev(98, 2)],
            packets: 100,
            filled: 0,
            final_state: None,
            adapt_stats: AdaptStats::default(),
        };
        let c = run.trial_curves(ClassLabel::Right, 0.5, 1.0, None).unwrap();
        assert_eq!(run.trial_curves(ClassLabel::Right, 0.5, 1.0, Some(1)).err().map(|e| e.to_string()).unwrap_or_default(), "need at least 2 trials, got 1");
        assert_eq!(c.curves[0].1.n_trials, 2);
        assert_eq!(c.times_s.len(), 15);
        assert_eq!(c.times_s[5], 0.0);
        // Trials start at samples 15 and 55.
        assert_eq!(c.curves[0].1.mean[0], 35.0);
        assert!((c.curves[0].1.sd[0] - 800f64.sqrt()).abs() < 1e-12);
        assert_eq!(c.window_mean("A", 0.0, 0.1), Some(40.0));
    }
}
