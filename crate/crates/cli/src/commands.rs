use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use sbs_core::bci::{cross_validate, prepare, train_bci, write_cv_csv, BciModel, ClassifierKind, CvConfig};
use sbs_core::dsp::{epoch_stream, BandpassSpec, ContinuousSignal, TrialSet};
use sbs_core::ingest::{detect_gaps, dropped_between, estimate_rate, timing_report as timing, PacketReader, SourceSpec, StatsTracker, TimingOptions};
use sbs_core::inverse::{synthetic_head_with_channels, HeadGeometry, PriorKind};
use sbs_core::netstream::{serve, KindSet, ServerConfig};
use sbs_core::pipeline::simulate_source;
use sbs_core::run::{self, open_source, OpenedSource, Provenance};
use sbs_core::simulate::truth_path;
use sbs_core::wire::{StreamWriter, DEFAULT_CHANNELS};
use sbs_core::{ClassLabel, EegPacket, EventMarker, PipelineConfig, StreamHeader};

use crate::args::*;

/// Error in the invocation rather than in the data; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// What a command prints: JSON with `--json`, text otherwise.
pub struct Report {
    pub json: Value,
    pub text: String,
}

impl Report {
    fn new(json: impl Serialize, text: String) -> Result<Self> {
        Ok(Self { json: serde_json::to_value(json)?, text })
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

/// `file:` sources are made absolute so that provenance survives a change
/// of working directory.
fn absolute_source(s: &str) -> Result<String> {
    Ok(match s.parse::<SourceSpec>() {
        Ok(SourceSpec::File { path }) => SourceSpec::File { path: absolute(&path)? }.to_string(),
        _ => s.to_string(),
    })
}

fn apply_source(src: &SourceArgs, c: &mut PipelineConfig) -> Result<()> {
    if let Some(s) = &src.source {
        c.source = absolute_source(s)?;
    }
    if let Some(v) = src.speed {
        c.speed = v;
    }
    if let Some(v) = src.seed {
        c.seed = v;
    }
    if let Some(v) = src.trials {
        c.sim.trials = v;
    }
    if let Some(v) = src.duration {
        c.sim.duration_s = v;
    }
    if let Some(v) = src.vertices {
        c.head.n_vertices = v;
    }
    if let Some(p) = &src.model {
        c.model = Some(absolute(p)?);
    }
    if let Some(v) = src.stats_every {
        c.stats_every_s = v;
    }
    Ok(())
}

fn source_config(src: &SourceArgs) -> Result<PipelineConfig> {
    let mut c = PipelineConfig::default();
    apply_source(src, &mut c)?;
    c.validate()?;
    Ok(c)
}

/// Canonical absolute form of the file arguments, stored in provenance.
fn absolute_source_args(src: &mut SourceArgs) -> Result<()> {
    if let Some(s) = &src.source {
        src.source = Some(absolute_source(s)?);
    }
    if let Some(p) = &src.model {
        src.model = Some(absolute(p)?);
    }
    Ok(())
}

fn provenance_path(primary: &Path) -> PathBuf {
    primary.with_extension("provenance.json")
}

fn write_provenance(command: &str, seed: u64, args: &impl Serialize, primary: &Path, outputs: &mut Vec<PathBuf>) -> Result<()> {
    let names = outputs
        .iter()
        .filter_map(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    let path = provenance_path(primary);
    Provenance::new(command, seed, args, names)?.save_to(&path)?;
    outputs.push(path);
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    create_parent(path)?;
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Logs running stream statistics every `every_s` seconds of stream time.
struct StatsLog {
    tracker: StatsTracker,
    every_ns: u64,
    next_ns: u64,
    origin: Option<u64>,
}

impl StatsLog {
    fn new(channels: usize, every_s: f64) -> Self {
        let every_ns = (every_s * 1e9) as u64;
        Self { tracker: StatsTracker::new(channels, 1e-3), every_ns, next_ns: every_ns, origin: None }
    }

    fn observe(&mut self, p: &EegPacket) {
        self.tracker.observe(p);
        if self.every_ns == 0 {
            return;
        }
        let t0 = *self.origin.get_or_insert(p.recv_time_ns);
        if p.recv_time_ns.saturating_sub(t0) >= self.next_ns {
            self.next_ns += self.every_ns;
            let s = self.tracker.snapshot();
            log::info!(
                "packets {} dropped {} crc/counter errors {} rate {:.4} Hz ({:.4}-{:.4})",
                s.packets_total,
                s.packets_dropped,
                s.counter_errors,
                s.observed_rate_hz,
                s.rate_ci_hz.0,
                s.rate_ci_hz.1
            );
        }
    }
}

/// Reads every packet of a source.
fn read_all(reader: &mut PacketReader<Box<dyn std::io::Read + Send>>, stats_every_s: f64) -> Result<Vec<EegPacket>> {
    let mut log = StatsLog::new(reader.header().channel_count, stats_every_s);
    let mut packets = Vec::new();
    while let Some(p) = reader.next_packet()? {
        log.observe(&p);
        packets.push(p);
    }
    Ok(packets)
}

pub fn sim(a: &SimArgs) -> Result<Report> {
    let mut a = a.clone();
    a.out = absolute(&a.out)?;
    let mut config = PipelineConfig { seed: a.seed, ..PipelineConfig::default() };
    config.head.n_vertices = a.vertices;
    config.sim.trials = a.trials;
    config.sim.duration_s = a.duration;
    config.validate()?;
    let model = config.forward_model(&StreamHeader::default())?;
    let (bytes, truth) = simulate_source(&a.scenario, &config, &model)?;
    create_parent(&a.out)?;
    fs::write(&a.out, &bytes).with_context(|| format!("writing {}", a.out.display()))?;
    let tpath = truth_path(&a.out);
    truth.save(&tpath)?;
    let mut outputs = vec![a.out.clone(), tpath];
    write_provenance("sim", a.seed, &a, &a.out, &mut outputs)?;

    let summary = json!({
        "scenario": a.scenario,
        "seed": a.seed,
        "samples": truth.n_samples,
        "packets_dropped": truth.packets_dropped(),
        "events": truth.events.len(),
        "bytes": bytes.len(),
        "outputs": outputs,
    });
    let text = format!(
        "{}: {} samples, {} dropped, {} events\n",
        a.out.display(),
        truth.n_samples,
        truth.packets_dropped(),
        truth.events.len()
    );
    Report::new(summary, text)
}

pub fn record(a: &RecordArgs) -> Result<Report> {
    let mut a = a.clone();
    absolute_source_args(&mut a.src)?;
    a.out = absolute(&a.out)?;
    let config = source_config(&a.src)?;
    let OpenedSource { mut reader, .. } = open_source(&config)?;
    let header = reader.header().clone();
    let mut writer = StreamWriter::new(header.clone(), create(&a.out)?)?;
    let mut log = StatsLog::new(header.channel_count, config.stats_every_s);
    let mut events = Vec::new();
    let mut grid = 0u64;
    let mut last_counter = None;
    let mut packets = 0u64;
    while a.max_packets.is_none_or(|m| packets < m) {
        let Some(p) = reader.next_packet()? else { break };
        log.observe(&p);
        if let Some(prev) = last_counter {
            grid += 1 + dropped_between(prev, p.counter);
        }
        last_counter = Some(p.counter);
        if p.event != 0 {
            let label = header.event_labels.get(&p.event).cloned().unwrap_or_else(|| format!("event{}", p.event));
            events.push(EventMarker { sample: grid, code: p.event, label, stream_time_ns: p.recv_time_ns });
        }
        writer.write_frame(&p.to_frame(&header))?;
        packets += 1;
    }
    writer.flush()?;
    drop(writer);

    let events_path = a.out.with_extension("events.csv");
    let mut w = csv::Writer::from_writer(create(&events_path)?);
    for e in &events {
        w.serialize(e)?;
    }
    w.flush()?;
    let stats = log.tracker.snapshot();
    let mut outputs = vec![a.out.clone(), events_path];
    write_provenance("record", config.seed, &a, &a.out, &mut outputs)?;

    let summary = json!({
        "source": config.source,
        "packets": packets,
        "packets_dropped": stats.packets_dropped,
        "corrupt_frames": reader.corrupt_frames(),
        "events": events.len(),
        "outputs": outputs,
    });
    let text = format!(
        "{}: {packets} packets, {} dropped, {} events\n",
        a.out.display(),
        stats.packets_dropped,
        events.len()
    );
    Report::new(summary, text)
}

pub fn replay(a: &ReplayArgs) -> Result<Report> {
    let mut a = a.clone();
    a.file = absolute(&a.file)?;
    if !(a.speed >= 0.0 && a.speed.is_finite()) {
        return Err(usage(format!("--speed {} must be >= 0", a.speed)));
    }
    let open = || PacketReader::open_file(&a.file, a.speed).with_context(|| format!("opening {}", a.file.display()));
    let copy = |reader: &mut PacketReader<_>, out: &mut dyn std::io::Write| -> Result<u64> {
        let header: StreamHeader = reader.header().clone();
        let mut writer = StreamWriter::new(header.clone(), out)?;
        let mut n = 0;
        while let Some(p) = reader.next_packet()? {
            writer.write_frame(&p.to_frame(&header))?;
            n += 1;
        }
        writer.flush()?;
        Ok(n)
    };

    if let Some(out) = &a.out {
        let out = absolute(out)?;
        a.out = Some(out.clone());
        let mut reader = open()?;
        let mut w = create(&out)?;
        let packets = copy(&mut reader, &mut w)?;
        w.flush()?;
        let mut outputs = vec![out.clone()];
        write_provenance("replay", 0, &a, &out, &mut outputs)?;
        let text = format!("{}: {packets} packets\n", out.display());
        return Report::new(json!({ "packets": packets, "outputs": outputs }), text);
    }

    let addr = a.serve.as_deref().ok_or_else(|| usage("either --out or --serve is required"))?;
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    let local = listener.local_addr()?;
    eprintln!("listening on {local}");
    let mut served = Vec::new();
    for _ in 0..a.clients {
        let (stream, peer) = listener.accept()?;
        stream.set_nodelay(true)?;
        log::info!("client {peer} connected");
        let mut reader = open()?;
        let mut w = std::io::BufWriter::with_capacity(0, stream);
        match copy(&mut reader, &mut w) {
            Ok(n) => served.push(json!({ "peer": peer.to_string(), "packets": n })),
            Err(e) => {
                log::warn!("client {peer}: {e:#}");
                served.push(json!({ "peer": peer.to_string(), "error": format!("{e:#}") }));
            }
        }
    }
    let text = format!("served {} client(s) on {local}\n", served.len());
    Report::new(json!({ "address": local.to_string(), "clients": served }), text)
}

fn reconstruct_config(a: &ReconstructArgs) -> Result<PipelineConfig> {
    let mut c = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    apply_source(&a.src, &mut c)?;
    if !a.rois.is_empty() {
        c.rois = a.rois.clone();
    }
    let current = match c.prior {
        PriorKind::Loreta { smoothness } => Some(smoothness),
        PriorKind::MinimumNorm => None,
    };
    c.prior = match (a.method, a.smoothness) {
        (Some(Method::Mn), Some(_)) => return Err(usage("--smoothness applies only to --method loreta")),
        (Some(Method::Mn), None) => PriorKind::MinimumNorm,
        (Some(Method::Loreta), s) => PriorKind::Loreta { smoothness: s.or(current).unwrap_or(0.2) },
        (None, Some(s)) if current.is_some() => PriorKind::Loreta { smoothness: s },
        (None, Some(_)) => return Err(usage("--smoothness applies only to --method loreta")),
        (None, None) => c.prior,
    };
    if let Some(v) = a.hop {
        c.hop_samples = v;
    }
    if let Some(v) = a.adapt_every {
        c.adapt_every_samples = v;
    }
    if let Some(v) = a.max_trials {
        c.max_trials = Some(v);
    }
    if let Some(d) = &a.out_dir {
        c.outputs.dir = Some(absolute(d)?);
    }
    if let Some(s) = &a.serve {
        c.outputs.serve = Some(s.clone());
    }
    c.validate()?;
    Ok(c)
}

fn reconstruct_report(out: &run::RunOutput) -> Result<Report> {
    let s = &out.summary;
    let mut text = String::new();
    let _ = writeln!(text, "packets {} (filled {}), ROI samples {}, events {}", s.packets, s.filled_samples, s.roi_samples, s.events);
    if let (Some(a), Some(b)) = (s.final_alpha, s.final_beta) {
        let _ = writeln!(text, "final alpha {a:.4e}, beta {b:.4e}, adaptations {} ({} failed)", s.adapt.runs, s.adapt.failures);
    }
    if let Some(l) = s.latency {
        let _ = writeln!(text, "latency p50 {:.3} ms, p99 {:.3} ms, max {:.3} ms", l.p50_ms, l.p99_ms, l.max_ms);
    }
    for x in &s.suppression {
        let _ = writeln!(
            text,
            "{:>5} cues, {:<16} n={:<3} baseline {:.4e} response {:.4e} drop {:.1}%",
            x.class.name(),
            x.roi,
            x.trials,
            x.baseline,
            x.response,
            100.0 * x.relative_drop
        );
    }
    for p in &s.outputs {
        let _ = writeln!(text, "wrote {}", p.display());
    }
    Report::new(s, text)
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<Report> {
    let config = reconstruct_config(a)?;
    let server = match &config.outputs.serve {
        Some(addr) => {
            let s = serve(addr, KindSet::all(), ServerConfig::default())?;
            eprintln!("serving on {}", s.local_addr());
            Some(s)
        }
        None => None,
    };
    let out = run::reconstruct(&config, server.as_ref());
    if let Some(s) = server {
        s.shutdown();
    }
    reconstruct_report(&out?)
}

fn parse_pair(s: &str, sep: char, flag: &str) -> Result<(f64, f64)> {
    let bad = || usage(format!("{flag} {s:?}: expected A{sep}B"));
    // Skip the first character so that a leading minus is not a separator.
    let cut = s.char_indices().skip(1).find(|&(_, c)| c == sep).map(|(i, _)| i).ok_or_else(bad)?;
    let a = s[..cut].trim().parse().map_err(|_| bad())?;
    let b = s[cut + 1..].trim().parse().map_err(|_| bad())?;
    Ok((a, b))
}

/// Cue-locked epochs of the Left and Right classes.
fn load_trials(config: &PipelineConfig, epoch: &str) -> Result<(TrialSet, usize)> {
    let (pre, post) = parse_pair(epoch, ':', "--epoch")?;
    if !(pre >= 0.0 && post > 0.0) {
        return Err(usage(format!("--epoch {epoch:?}: need PRE >= 0 and POST > 0")));
    }
    let OpenedSource { mut reader, .. } = open_source(config)?;
    let header = reader.header().clone();
    let packets = read_all(&mut reader, config.stats_every_s)?;
    let signal = ContinuousSignal::from_packets(&header, packets);
    let cues: Vec<EventMarker> = signal
        .events
        .iter()
        .filter(|e| matches!(e.class(), Some(ClassLabel::Left | ClassLabel::Right)))
        .cloned()
        .collect();
    let outcome = epoch_stream(&signal, &cues, pre, post);
    for r in &outcome.rejected {
        log::warn!("event at sample {} skipped: {}", r.marker.sample, r.reason);
    }
    Ok((outcome.trials, outcome.rejected.len()))
}

pub fn bci_train(a: &BciTrainArgs) -> Result<Report> {
    let mut a = a.clone();
    absolute_source_args(&mut a.src)?;
    a.out = absolute(&a.out)?;
    if let Some(p) = &a.cv_out {
        a.cv_out = Some(absolute(p)?);
    }
    let config = source_config(&a.src)?;
    let (low, high) = parse_pair(&a.epochs.band, '-', "--band")?;
    let classifier: ClassifierKind = a.classifier.parse().map_err(usage)?;
    let cfg = CvConfig {
        band: BandpassSpec::new(low, high, BandpassSpec::mu_beta().order),
        interval_s: parse_pair(&a.epochs.interval, ':', "--interval")?,
        m_values: vec![a.csp_m],
        folds: a.folds,
        repeats: a.repeats,
        train_sizes: (!a.train_sizes.is_empty()).then(|| a.train_sizes.clone()),
        classifier,
        seed: config.seed,
        ..CvConfig::default()
    };
    if a.csp_m == 0 {
        return Err(usage("--csp-m must be >= 1"));
    }
    let (mut trials, rejected) = load_trials(&config, &a.epochs.epoch)?;
    if a.shuffle_labels {
        let mut labels: Vec<_> = trials.epochs.iter().map(|e| e.class_label).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
        for (e, l) in trials.epochs.iter_mut().zip(labels) {
            e.class_label = l;
        }
    }

    let rows = if a.no_cv { Vec::new() } else { cross_validate(&trials, &cfg)? };
    let model = train_bci(&trials, &cfg, a.csp_m)?;
    let mut w = create(&a.out)?;
    serde_json::to_writer_pretty(&mut w, &model)?;
    w.write_all(b"\n")?;
    w.flush()?;
    let mut outputs = vec![a.out.clone()];
    if let Some(p) = &a.cv_out {
        write_cv_csv(create(p)?, &rows)?;
        outputs.push(p.clone());
    }
    write_provenance("bci-train", config.seed, &a, &a.out, &mut outputs)?;

    let mut text = format!(
        "{} trials ({} Left, {} Right, {rejected} rejected)\n",
        trials.len(),
        trials.count(ClassLabel::Left),
        trials.count(ClassLabel::Right)
    );
    for r in &rows {
        let _ = writeln!(
            text,
            "m={} train={:<4} accuracy {:.1}% ± {:.1}% over {} repeats",
            r.m,
            r.train_size,
            100.0 * r.mean_accuracy,
            100.0 * r.sd_accuracy,
            r.repeats
        );
    }
    let _ = writeln!(text, "model written to {}", a.out.display());
    let summary = json!({
        "trials": trials.len(),
        "left": trials.count(ClassLabel::Left),
        "right": trials.count(ClassLabel::Right),
        "rejected": rejected,
        "cv": rows,
        "outputs": outputs,
    });
    Report::new(summary, text)
}

pub fn bci_eval(a: &BciEvalArgs) -> Result<Report> {
    let mut a = a.clone();
    absolute_source_args(&mut a.src)?;
    a.bci_model = absolute(&a.bci_model)?;
    if let Some(p) = &a.out {
        a.out = Some(absolute(p)?);
    }
    let config = source_config(&a.src)?;
    let path = &a.bci_model;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let model: BciModel = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let (trials, rejected) = load_trials(&config, &a.epoch)?;
    let prepared = prepare(&trials.with_classes(&model.csp.classes), &model.csp.band, model.csp.interval_s)?;
    if prepared.is_empty() {
        bail!("no labelled trials in the stream");
    }

    let classes = &model.csp.classes;
    let mut confusion = vec![vec![0usize; classes.len()]; classes.len()];
    let mut rows = Vec::new();
    for e in &prepared.epochs {
        let p = model.predict_prepared(&e.data)?;
        let truth = e.class_label.ok_or_else(|| anyhow!("unlabelled epoch"))?;
        if let (Some(i), Some(j)) = (classes.iter().position(|c| *c == truth), classes.iter().position(|c| *c == p.label)) {
            confusion[i][j] += 1;
        }
        rows.push((e.trial_id, e.event_sample, truth, p));
    }
    let correct = rows.iter().filter(|(_, _, t, p)| *t == p.label).count();
    let accuracy = correct as f64 / rows.len() as f64;

    let mut outputs = Vec::new();
    if let Some(path) = &a.out {
        let mut w = csv::Writer::from_writer(create(path)?);
        let mut head = vec!["trial".to_string(), "sample".into(), "true".into(), "predicted".into()];
        head.extend(classes.iter().map(|c| format!("p_{}", c.name().to_ascii_lowercase())));
        w.write_record(&head)?;
        for (id, sample, t, p) in &rows {
            let mut rec = vec![id.to_string(), sample.to_string(), t.name().into(), p.label.name().into()];
            rec.extend(p.probabilities.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        outputs.push(path.clone());
        write_provenance("bci-eval", config.seed, &a, path, &mut outputs)?;
    }

    let names: Vec<&str> = classes.iter().map(|c| c.name()).collect();
    let mut text = format!("accuracy {:.1}% ({correct}/{}), {rejected} epochs rejected\n", 100.0 * accuracy, rows.len());
    for (i, row) in confusion.iter().enumerate() {
        let _ = writeln!(text, "  true {:<6} predicted {:?}", names[i], row);
    }
    let summary = json!({
        "accuracy": accuracy,
        "trials": rows.len(),
        "rejected": rejected,
        "classes": names,
        "confusion": confusion,
        "outputs": outputs,
    });
    Report::new(summary, text)
}

pub fn timing_report(a: &TimingArgs) -> Result<Report> {
    let mut a = a.clone();
    absolute_source_args(&mut a.src)?;
    if let Some(p) = &a.out {
        a.out = Some(absolute(p)?);
    }
    if a.frame_size == 0 {
        return Err(usage("--frame-size must be >= 1"));
    }
    let config = source_config(&a.src)?;
    let OpenedSource { mut reader, .. } = open_source(&config)?;
    let packets = read_all(&mut reader, config.stats_every_s)?;
    let times: Vec<u64> = packets.iter().map(|p| p.recv_time_ns).collect();
    let counters: Vec<u8> = packets.iter().map(|p| p.counter).collect();
    let dropped: u64 = detect_gaps(&counters).iter().sum();
    let rate = estimate_rate(&times, Some(&counters), a.resolution)?;
    let opts = TimingOptions { frame_size: a.frame_size, expected_rate_hz: a.expected_rate, ..TimingOptions::default() };
    let report = timing(&times, &opts)?;

    let mut outputs = Vec::new();
    if let Some(path) = &a.out {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(["group", "distance_s", "running_mean_s"])?;
        for (i, (d, m)) in report.distances_s.iter().zip(&report.running_mean_s).enumerate() {
            w.write_record([i.to_string(), d.to_string(), m.to_string()])?;
        }
        w.flush()?;
        outputs.push(path.clone());
        write_provenance("timing-report", config.seed, &a, path, &mut outputs)?;
    }

    let mut text = format!(
        "packets {} ({} dropped, {} corrupt)\nrate {:.4} Hz ({:.4}-{:.4}) over {:.1} s\n",
        packets.len(),
        dropped,
        reader.corrupt_frames(),
        rate.rate_hz,
        rate.ci_low_hz,
        rate.ci_high_hz,
        rate.span_s
    );
    let _ = writeln!(
        text,
        "{}-packet distance: mean {:.4} ms, expected {:.4} ms, running mean within {:.3}%",
        report.frame_size,
        report.mean_distance_s * 1e3,
        report.expected_distance_s * 1e3,
        100.0 * report.running_mean_max_rel_dev
    );
    match report.compensation {
        Some(c) => {
            let _ = writeln!(text, "compensation every {} samples ({} groups), strength {:.2}", c.period_samples, c.period_groups, c.strength);
        }
        None => text.push_str("no compensation pattern\n"),
    }
    let summary = json!({
        "packets": packets.len(),
        "packets_dropped": dropped,
        "corrupt_frames": reader.corrupt_frames(),
        "rate": rate,
        "frame_size": report.frame_size,
        "mean_distance_s": report.mean_distance_s,
        "expected_distance_s": report.expected_distance_s,
        "running_mean_max_rel_dev": report.running_mean_max_rel_dev,
        "compensation": report.compensation,
        "outputs": outputs,
    });
    Report::new(summary, text)
}

pub fn model_export(a: &ModelExportArgs) -> Result<Report> {
    let mut a = a.clone();
    a.out = absolute(&a.out)?;
    if a.vertices < 2 {
        return Err(usage("--vertices must be >= 2"));
    }
    let labels: Vec<String> = if a.channels.is_empty() {
        DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect()
    } else {
        a.channels.clone()
    };
    let geom = HeadGeometry { n_vertices: a.vertices, ..HeadGeometry::default() };
    let model = synthetic_head_with_channels(&geom, &labels);
    model.validate()?;
    create_parent(&a.out)?;
    model.save(&a.out)?;
    let mut outputs = vec![a.out.clone()];
    write_provenance("model-export", 0, &a, &a.out, &mut outputs)?;
    let text = format!("{}: {} channels × {} sources\n", a.out.display(), model.n_channels(), model.n_sources());
    Report::new(json!({ "channels": model.n_channels(), "sources": model.n_sources(), "outputs": outputs }), text)
}

/// Moves an output path into `dir`, keeping its file name.
fn redirect(path: &Path, dir: Option<&Path>) -> PathBuf {
    match (dir, path.file_name()) {
        (Some(d), Some(name)) => d.join(name),
        _ => path.to_path_buf(),
    }
}

pub fn rerun(a: &RerunArgs) -> Result<Report> {
    let prov = Provenance::load(&a.provenance).with_context(|| format!("loading {}", a.provenance.display()))?;
    let dir = a.out_dir.as_deref().map(absolute).transpose()?;
    let dir = dir.as_deref();
    match prov.command.as_str() {
        "reconstruct" => reconstruct_report(&run::rerun_reconstruct(&prov, dir)?),
        "sim" => {
            let mut x: SimArgs = prov.config_as()?;
            x.out = redirect(&x.out, dir);
            sim(&x)
        }
        "record" => {
            let mut x: RecordArgs = prov.config_as()?;
            x.out = redirect(&x.out, dir);
            record(&x)
        }
        "replay" => {
            let mut x: ReplayArgs = prov.config_as()?;
            x.out = x.out.map(|p| redirect(&p, dir));
            replay(&x)
        }
        "bci-train" => {
            let mut x: BciTrainArgs = prov.config_as()?;
            x.out = redirect(&x.out, dir);
            x.cv_out = x.cv_out.map(|p| redirect(&p, dir));
            bci_train(&x)
        }
        "bci-eval" => {
            let mut x: BciEvalArgs = prov.config_as()?;
            x.out = x.out.map(|p| redirect(&p, dir));
            bci_eval(&x)
        }
        "timing-report" => {
            let mut x: TimingArgs = prov.config_as()?;
            x.out = x.out.map(|p| redirect(&p, dir));
            timing_report(&x)
        }
        "model-export" => {
            let mut x: ModelExportArgs = prov.config_as()?;
            x.out = redirect(&x.out, dir);
            model_export(&x)
        }
        other => Err(usage(format!("{}: unknown command {other:?}", a.provenance.display()))),
    }
}
