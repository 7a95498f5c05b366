//! End-to-end reconstruction runs: open a source, stream it through the
//! pipeline on a reader thread, publish and write results, and record
//! provenance so that a run can be repeated exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Cursor, Read};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::event::ClassLabel;
use crate::ingest::{spawn_reader, Clocking, PacketReader, SourceSpec, StatsTracker};
use crate::inverse::ForwardModel;
use crate::netstream::{Payload, StreamServer};
use crate::pipeline::{
    simulate_source, AdaptStats, PipelineConfig, PipelineError, ReconstructionPipeline, ReconstructionRun,
    TrialCurves,
};
use crate::report::{mean_sd_svg, ChartLabels};
use crate::simulate::GroundTruth;
use crate::wire::{StreamHeader, FORMAT_VERSION};
use crate::inverse::write_trial_average_csv;

pub const PROVENANCE_FILE: &str = "provenance.json";
pub const ROI_CSV: &str = "roi_power.csv";
const QUEUE_CAPACITY: usize = 1024;

/// A packet source ready to read, plus the simulator's ground truth when
/// the source is synthetic.
pub struct OpenedSource {
    pub reader: PacketReader<Box<dyn Read + Send>>,
    pub truth: Option<GroundTruth>,
}

/// Opens the configured source. Simulated streams use a forward model
/// built for the default montage.
pub fn open_source(config: &PipelineConfig) -> Result<OpenedSource, PipelineError> {
    let clocking = Clocking::Recorded { speed: config.speed };
    Ok(match config.source_spec()? {
        SourceSpec::File { path } => {
            let file = fs::File::open(&path).map_err(|e| {
                PipelineError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
            })?;
            let reader = PacketReader::new(std::io::BufReader::new(file), clocking)?;
            OpenedSource { reader: reader.boxed(), truth: None }
        }
        SourceSpec::Tcp { host, port } => OpenedSource { reader: PacketReader::connect(&host, port)?.boxed(), truth: None },
        SourceSpec::Sim { scenario } => {
            let model = config.forward_model(&StreamHeader::default())?;
            let (bytes, truth) = simulate_source(&scenario, config, &model)?;
            OpenedSource { reader: PacketReader::new(Cursor::new(bytes), clocking)?.boxed(), truth: Some(truth) }
        }
    })
}

/// Arrival-to-output delay distribution, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_ns(mut ns: Vec<u64>) -> Option<Self> {
        if ns.is_empty() {
            return None;
        }
        ns.sort_unstable();
        let q = |p: f64| ns[((p * (ns.len() - 1) as f64).round() as usize).min(ns.len() - 1)] as f64 * 1e-6;
        Some(Self { samples: ns.len(), p50_ms: q(0.5), p99_ms: q(0.99), max_ms: *ns.last().unwrap() as f64 * 1e-6 })
    }
}

/// Mean ROI power in the baseline and response windows of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suppression {
    pub class: ClassLabel,
    pub roi: String,
    pub trials: usize,
    pub baseline: f64,
    pub response: f64,
    /// `1 - response / baseline`.
    pub relative_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub source: String,
    pub packets: u64,
    pub filled_samples: u64,
    pub roi_samples: usize,
    pub events: usize,
    pub corrupt_frames: u64,
    pub adapt: AdaptStats,
    pub final_alpha: Option<f64>,
    pub final_beta: Option<f64>,
    /// Delay from a packet entering the pipeline to its ROI sample being
    /// published, excluding the initial adaptation window.
    pub latency: Option<LatencyStats>,
    pub suppression: Vec<Suppression>,
    pub outputs: Vec<PathBuf>,
}

/// What a run produced, including the in-memory results.
pub struct RunOutput {
    pub summary: RunSummary,
    pub run: ReconstructionRun,
    pub curves: Vec<TrialCurves>,
    pub truth: Option<GroundTruth>,
}

/// Runs a reconstruction as configured. Files are written only when
/// `config.outputs.dir` is set; ROI powers, events and raw packets are
/// published on `server` when given.
pub fn reconstruct(config: &PipelineConfig, server: Option<&StreamServer>) -> Result<RunOutput, PipelineError> {
    config.validate()?;
    let OpenedSource { reader, truth } = open_source(config)?;
    let header = reader.header().clone();
    let model = config.forward_model(&header)?;
    let solver = Arc::new(config.solver(&model)?);
    reconstruct_with(config, reader, truth, &model, solver, server)
}

/// [`reconstruct`] with the source, model and factorized solver supplied.
pub fn reconstruct_with(
    config: &PipelineConfig,
    reader: PacketReader<Box<dyn Read + Send>>,
    truth: Option<GroundTruth>,
    model: &ForwardModel,
    solver: Arc<crate::inverse::SpectralSolver>,
    server: Option<&StreamServer>,
) -> Result<RunOutput, PipelineError> {
    let header = reader.header().clone();
    let mut pipeline = ReconstructionPipeline::with_solver(config, solver, model, &header)?;
    let rois = pipeline.rois().to_vec();
    let warmup = config.adapt_every_samples as u64;
    let mut stats = StatsTracker::new(header.channel_count, 1e-3);
    let stats_every_ns = (config.stats_every_s * 1e9) as u64;
    let mut next_stats = stats_every_ns;

    let (rx, handle) = spawn_reader(reader, QUEUE_CAPACITY);
    let mut samples = Vec::new();
    let mut latencies = Vec::new();
    let mut packets = 0u64;
    let mut first_time = None;
    let mut publish = |out: Vec<crate::pipeline::RoiSample>, latencies: &mut Vec<u64>| -> Result<(), PipelineError> {
        if let Some(server) = server {
            for s in &out {
                for (name, &power) in rois.iter().zip(&s.powers) {
                    server.publish(s.recv_time_ns, Payload::RoiPower { name: name.clone(), power })?;
                }
            }
        }
        let now = crate::ingest::monotonic_ns();
        latencies.extend(out.iter().filter(|s| s.sample >= warmup).map(|s| now.saturating_sub(s.arrival_ns)));
        samples.extend(out);
        Ok(())
    };
    let mut failure = None;
    for item in rx {
        let p = match item {
            Ok(p) => p,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        packets += 1;
        stats.observe(&p);
        if stats_every_ns > 0 {
            let t0 = *first_time.get_or_insert(p.recv_time_ns);
            if p.recv_time_ns.saturating_sub(t0) >= next_stats {
                next_stats += stats_every_ns;
                let s = stats.snapshot();
                log::info!(
                    "packets {} dropped {} rate {:.4} Hz ({:.4}-{:.4})",
                    s.packets_total,
                    s.packets_dropped,
                    s.observed_rate_hz,
                    s.rate_ci_hz.0,
                    s.rate_ci_hz.1
                );
            }
        }
        if let Some(server) = server {
            let values_uv = p.values_uv.iter().map(|&v| v as f32).collect();
            server.publish(p.recv_time_ns, Payload::RawPacket { counter: p.counter, event: p.event, values_uv })?;
            if p.event != 0 {
                let label = header.event_labels.get(&p.event).cloned().unwrap_or_default();
                server.publish(p.recv_time_ns, Payload::EventMarker { code: p.event as u16, label })?;
            }
        }
        let out = pipeline.push(&p)?;
        publish(out, &mut latencies)?;
    }
    let corrupt = handle.join().unwrap_or(0);
    if let Some(e) = failure {
        return Err(e.into());
    }
    let out = pipeline.finish()?;
    publish(out, &mut latencies)?;

    let run = ReconstructionRun {
        rois: pipeline.rois().to_vec(),
        rate_hz: pipeline.rate_hz(),
        samples,
        events: pipeline.events().to_vec(),
        packets,
        filled: pipeline.filled_samples(),
        final_state: pipeline.state().cloned(),
        adapt_stats: pipeline.adapt_stats(),
    };

    let mut curves = Vec::new();
    let mut suppression = Vec::new();
    for class in [ClassLabel::Left, ClassLabel::Right] {
        let Ok(c) = run.trial_curves(class, config.epoch_pre_s, config.epoch_post_s, config.max_trials) else {
            continue;
        };
        for (roi, avg) in &c.curves {
            let (b0, b1) = config.baseline_window_s;
            let (r0, r1) = config.response_window_s;
            let baseline = avg.mean_over(&c.times_s, b0, b1);
            let response = avg.mean_over(&c.times_s, r0, r1);
            suppression.push(Suppression {
                class,
                roi: roi.clone(),
                trials: avg.n_trials,
                baseline,
                response,
                relative_drop: 1.0 - response / baseline,
            });
        }
        curves.push(c);
    }

    let mut outputs = Vec::new();
    if let Some(dir) = &config.outputs.dir {
        fs::create_dir_all(dir)?;
        if config.outputs.roi_csv {
            let path = dir.join(ROI_CSV);
            run.write_roi_csv(BufWriter::new(fs::File::create(&path)?))?;
            outputs.push(path);
        }
        if config.outputs.trial_average {
            for c in &curves {
                let stem = format!("trial_average_{}", c.class.name().to_ascii_lowercase());
                let csv_path = dir.join(format!("{stem}.csv"));
                write_trial_average_csv(BufWriter::new(fs::File::create(&csv_path)?), &c.times_s, &c.curves)?;
                let labels = ChartLabels {
                    title: format!("ROI power, {} cues (n = {})", c.class.name(), c.curves.first().map(|x| x.1.n_trials).unwrap_or(0)),
                    x: "time from cue (s)".into(),
                    y: "power (nAm²)".into(),
                };
                let svg_path = dir.join(format!("{stem}.svg"));
                fs::write(&svg_path, mean_sd_svg(&labels, &c.times_s, &c.curves))?;
                outputs.push(csv_path);
                outputs.push(svg_path);
            }
        }
        let names = outputs.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect();
        Provenance::new("reconstruct", config.seed, config, names)?.save(dir)?;
        outputs.push(dir.join(PROVENANCE_FILE));
    }

    let summary = RunSummary {
        source: config.source.clone(),
        packets,
        filled_samples: run.filled,
        roi_samples: run.samples.len(),
        events: run.events.len(),
        corrupt_frames: corrupt,
        adapt: run.adapt_stats,
        final_alpha: run.final_state.as_ref().map(|s| s.alpha),
        final_beta: run.final_state.as_ref().map(|s| s.beta),
        latency: LatencyStats::from_ns(latencies),
        suppression,
        outputs,
    };
    Ok(RunOutput { summary, run, curves, truth })
}

/// Everything needed to repeat a run: the command, its full configuration
/// and the versions that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub command: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub config: serde_json::Value,
    /// Output files, relative to the provenance file.
    pub outputs: Vec<String>,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, config: &impl Serialize, outputs: Vec<String>) -> Result<Self, PipelineError> {
        let versions = BTreeMap::from([
            ("sbs-core".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("sbsr-format".to_string(), FORMAT_VERSION.to_string()),
        ]);
        Ok(Self {
            tool: "sbs".into(),
            command: command.into(),
            seed,
            versions,
            config: serde_json::to_value(config)?,
            outputs,
        })
    }

    /// Writes `provenance.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        self.save_to(&dir.join(PROVENANCE_FILE))
    }

    pub fn save_to(&self, path: &Path) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// The stored configuration as `T`.
    pub fn config_as<T: serde::de::DeserializeOwned>(&self) -> Result<T, PipelineError> {
        Ok(serde_json::from_value(self.config.clone())?)
    }
}

/// Repeats a recorded reconstruction, writing into `out_dir` (or the
/// original directory).
pub fn rerun_reconstruct(prov: &Provenance, out_dir: Option<&Path>) -> Result<RunOutput, PipelineError> {
    if prov.command != "reconstruct" {
        return Err(PipelineError::Config {
            field: "command".into(),
            reason: format!("{:?} is not a reconstruction", prov.command),
        });
    }
    let mut config: PipelineConfig = prov.config_as()?;
    if let Some(dir) = out_dir {
        config.outputs.dir = Some(dir.to_path_buf());
    }
    reconstruct(&config, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inverse::HeadGeometry;

    fn quick_config(dir: Option<PathBuf>) -> PipelineConfig {
        let mut c = PipelineConfig {
            source: "sim:erd".into(),
            head: HeadGeometry { n_vertices: 200, ..HeadGeometry::default() },
            ..PipelineConfig::default()
        };
        c.sim.trials = 6;
        c.outputs.dir = dir;
        c
    }

    #[test]
    fn latency_quantiles() {
        let l = LatencyStats::from_ns((1..=100).map(|k| k * 1_000_000).collect()).unwrap();
        assert_eq!(l.samples, 100);
        assert_eq!(l.p99_ms, 99.0);
        assert_eq!(l.max_ms, 100.0);
        assert!(LatencyStats::from_ns(vec![]).is_none());
    }

    #[test]
    fn writes_outputs_and_reruns_identically() {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a");
        let out = reconstruct(&quick_config(Some(first.clone())), None).unwrap();
        assert_eq!(out.summary.roi_samples as u64, out.summary.packets + out.summary.filled_samples);
        let prov = Provenance::load(&first.join(PROVENANCE_FILE)).unwrap();
        assert!(prov.outputs.contains(&ROI_CSV.to_string()));
        let second = dir.path().join("b");
        rerun_reconstruct(&prov, Some(&second)).unwrap();
        for name in &prov.outputs {
            assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap(), "{name}");
        }
    }

    #[test]
    fn missing_file_names_the_path() {
        let mut c = quick_config(None);
        c.source = "file:/nonexistent/x.sbsr".into();
        let err = reconstruct(&c, None).err().unwrap().to_string();
        assert!(err.contains("/nonexistent/x.sbsr"), "{err}");
    }

    #[test]
    fn rerun_rejects_other_commands() {
        let p = Provenance::new("sim", 1, &serde_json::json!({}), vec![]).unwrap();
        assert!(rerun_reconstruct(&p, None).is_err());
    }
}
