//! Packet acquisition: turns an SBSR byte source into a validated,
//! gap-annotated packet stream, and measures sampling rate and delivery
//! timing from receive timestamps.

use std::fmt;
use std::io::{self, BufReader, ErrorKind, Read};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::OnceLock;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{
    decode_frame, quality_status, EegPacket, QualityStatus, StreamHeader, WireError, COUNTER_MODULUS,
};

/// Recordings shorter than this do not constrain the rate well enough.
pub const MIN_RATE_SPAN_S: f64 = 10.0;
/// Minimum packet count for a timing report.
pub const MIN_TIMING_PACKETS: usize = 64;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("peer disconnected {partial} bytes into a frame")]
    Disconnected { partial: usize },
    #[error("stream ends {partial} bytes into a frame")]
    TruncatedStream { partial: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid source: {0}")]
    InvalidSource(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Nanoseconds on a process-wide monotonic clock.
pub fn monotonic_ns() -> u64 {
    static EPOCH: OnceLock<Instant> = OnceLock::new();
    EPOCH.get_or_init(Instant::now).elapsed().as_nanos() as u64
}

/// Where packets come from, as written on the command line:
/// `file:PATH`, `tcp:HOST:PORT` or `sim:SCENARIO`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    File { path: PathBuf },
    Tcp { host: String, port: u16 },
    Sim { scenario: String },
}

impl FromStr for SourceSpec {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IngestError::InvalidSource(format!("{s:?}: expected file:PATH, tcp:HOST:PORT or sim:SCENARIO"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "file" if !rest.is_empty() => Ok(SourceSpec::File { path: rest.into() }),
            "tcp" => {
                let (host, port) = rest.rsplit_once(':').ok_or_else(bad)?;
                let port = port.parse().map_err(|_| bad())?;
                Ok(SourceSpec::Tcp { host: host.to_string(), port })
            }
            "sim" if !rest.is_empty() => Ok(SourceSpec::Sim { scenario: rest.to_string() }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceSpec::File { path } => write!(f, "file:{}", path.display()),
            SourceSpec::Tcp { host, port } => write!(f, "tcp:{host}:{port}"),
            SourceSpec::Sim { scenario } => write!(f, "sim:{scenario}"),
        }
    }
}

/// How packets are timestamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clocking {
    /// Use the timestamps stored in each frame. Delivery is paced so that
    /// recorded time advances `speed` times faster than wall time; a speed
    /// of 0 delivers as fast as possible.
    Recorded { speed: f64 },
    /// Stamp each frame from the local monotonic clock once it is parsed.
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Transport {
    File,
    Network,
}

/// Reads SBSR frames from a byte source and yields [`EegPacket`]s.
pub struct PacketReader<R> {
    header: StreamHeader,
    inner: R,
    transport: Transport,
    clocking: Clocking,
    buf: Vec<u8>,
    seq: u64,
    corrupt: u64,
    last_time: u64,
    pace_origin: Option<(Instant, u64)>,
}

impl PacketReader<BufReader<std::fs::File>> {
    pub fn open_file(path: impl AsRef<Path>, speed: f64) -> Result<Self, IngestError> {
        if !(speed >= 0.0 && speed.is_finite()) {
            return Err(IngestError::InvalidSource(format!("speed factor {speed} must be >= 0")));
        }
        let file = std::fs::File::open(path)?;
        Self::new(BufReader::new(file), Clocking::Recorded { speed })
    }
}

impl PacketReader<TcpStream> {
    pub fn connect(host: &str, port: u16) -> Result<Self, IngestError> {
        let stream = TcpStream::connect((host, port))?;
        stream.set_nodelay(true)?;
        let mut reader = Self::new(stream, Clocking::Live)?;
        reader.transport = Transport::Network;
        Ok(reader)
    }
}

impl<R: Read> PacketReader<R> {
    /// Reads the stream header; frames are parsed lazily.
    pub fn new(mut inner: R, clocking: Clocking) -> Result<Self, IngestError> {
        let header = StreamHeader::read_from(&mut inner)?;
        let buf = vec![0u8; header.frame_size()];
        Ok(Self {
            header,
            inner,
            transport: Transport::File,
            clocking,
            buf,
            seq: 0,
            corrupt: 0,
            last_time: 0,
            pace_origin: None,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    /// Frames skipped because they failed validation.
    pub fn corrupt_frames(&self) -> u64 {
        self.corrupt
    }

    /// Next packet in arrival order, or `None` at a clean end of stream.
    /// Corrupt frames are skipped and counted.
    pub fn next_packet(&mut self) -> Result<Option<EegPacket>, IngestError> {
        loop {
            let got = read_full(&mut self.inner, &mut self.buf)?;
            if got == 0 {
                return Ok(None);
            }
            if got < self.buf.len() {
                return Err(match self.transport {
                    Transport::Network => IngestError::Disconnected { partial: got },
                    Transport::File => IngestError::TruncatedStream { partial: got },
                });
            }
            let frame = match decode_frame(&self.header, &self.buf) {
                Ok(f) => f,
                Err(WireError::BadCrc { .. } | WireError::CounterOutOfRange(_) | WireError::QualityChannelOutOfRange { .. }) => {
                    self.corrupt += 1;
                    log::warn!("skipping corrupt frame after seq {}", self.seq);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let stamp = match self.clocking {
                Clocking::Live => monotonic_ns(),
                Clocking::Recorded { speed } => {
                    if speed > 0.0 {
                        self.pace(frame.stamp_ns, speed);
                    }
                    frame.stamp_ns
                }
            };
            let recv = stamp.max(self.last_time);
            self.last_time = recv;
            let packet = EegPacket::from_frame(&self.header, &frame, self.seq, recv);
            self.seq += 1;
            return Ok(Some(packet));
        }
    }

    fn pace(&mut self, stamp: u64, speed: f64) {
        let (origin, first) = *self.pace_origin.get_or_insert((Instant::now(), stamp));
        let offset = stamp.saturating_sub(first) as f64 / speed;
        let due = origin + Duration::from_nanos(offset as u64);
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
    }

    /// Type-erases the byte source.
    pub fn boxed(self) -> PacketReader<Box<dyn Read + Send>>
    where
        R: Send + 'static,
    {
        PacketReader {
            header: self.header,
            inner: Box::new(self.inner),
            transport: self.transport,
            clocking: self.clocking,
            buf: self.buf,
            seq: self.seq,
            corrupt: self.corrupt,
            last_time: self.last_time,
            pace_origin: self.pace_origin,
        }
    }

    pub fn packets(self) -> Packets<R> {
        Packets { reader: self, done: false }
    }
}

/// Reads until `buf` is full or EOF; returns the number of bytes read.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) if filled > 0 && matches!(e.kind(), ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub struct Packets<R> {
    reader: PacketReader<R>,
    done: bool,
}

impl<R: Read> Iterator for Packets<R> {
    type Item = Result<EegPacket, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.reader.next_packet() {
            Ok(Some(p)) => Some(Ok(p)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Runs a reader on its own thread behind a bounded queue. A full queue
/// blocks the reader; packets are never dropped.
pub fn spawn_reader<R: Read + Send + 'static>(
    reader: PacketReader<R>,
    capacity: usize,
) -> (Receiver<Result<EegPacket, IngestError>>, JoinHandle<u64>) {
    let (tx, rx) = sync_channel(capacity.max(1));
    let handle = thread::Builder::new()
        .name("sbs-ingest".into())
        .spawn(move || {
            let mut reader = reader;
            loop {
                match reader.next_packet() {
                    Ok(Some(p)) => {
                        if tx.send(Ok(p)).is_err() {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
            reader.corrupt_frames()
        })
        .expect("spawn ingest thread");
    (rx, handle)
}

/// Packets lost between two consecutive counters, modulo 129.
pub fn dropped_between(prev: u8, next: u8) -> u64 {
    let m = COUNTER_MODULUS as i32;
    (next as i32 - prev as i32 - 1).rem_euclid(m) as u64
}

/// Per-gap drop counts for a counter sequence. Each count is exact only
/// when the true gap is shorter than 129 packets.
pub fn detect_gaps(counters: &[u8]) -> Vec<u64> {
    counters.windows(2).map(|w| dropped_between(w[0], w[1])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub rate_hz: f64,
    pub ci_low_hz: f64,
    pub ci_high_hz: f64,
    /// Sample intervals covered, counting inferred drops.
    pub intervals: u64,
    pub span_s: f64,
}

/// Sampling rate from receive timestamps, `(n - 1) / (t_last - t_first)`,
/// where `n` includes packets inferred lost from the counters. The interval
/// widens the span by the timestamp resolution on either side.
pub fn estimate_rate(
    recv_times_ns: &[u64],
    counters: Option<&[u8]>,
    resolution_s: f64,
) -> Result<RateEstimate, IngestError> {
    if recv_times_ns.len() < 2 {
        return Err(IngestError::InsufficientData("need at least 2 packets".into()));
    }
    if let Some(c) = counters {
        if c.len() != recv_times_ns.len() {
            return Err(IngestError::InsufficientData("counter and timestamp lengths differ".into()));
        }
    }
    let first = recv_times_ns[0];
    let last = *recv_times_ns.last().unwrap();
    let span_s = last.saturating_sub(first) as f64 * 1e-9;
    if span_s < MIN_RATE_SPAN_S {
        return Err(IngestError::InsufficientData(format!(
            "window spans {span_s:.3} s, need {MIN_RATE_SPAN_S} s"
        )));
    }
    let dropped: u64 = counters.map(|c| detect_gaps(c).iter().sum()).unwrap_or(0);
    let intervals = (recv_times_ns.len() as u64 - 1) + dropped;
    let n = intervals as f64;
    let res = resolution_s.abs();
    let rate_hz = n / span_s;
    let ci_high_hz = if span_s > res { n / (span_s - res) } else { f64::INFINITY };
    Ok(RateEstimate { rate_hz, ci_low_hz: n / (span_s + res), ci_high_hz, intervals, span_s })
}

/// [`estimate_rate`] over the trailing `window_s` seconds.
pub fn estimate_rate_windowed(
    recv_times_ns: &[u64],
    counters: Option<&[u8]>,
    window_s: f64,
    resolution_s: f64,
) -> Result<RateEstimate, IngestError> {
    let Some(&last) = recv_times_ns.last() else {
        return Err(IngestError::InsufficientData("no packets".into()));
    };
    let cutoff = last.saturating_sub((window_s * 1e9) as u64);
    let start = recv_times_ns.partition_point(|&t| t < cutoff);
    estimate_rate(&recv_times_ns[start..], counters.map(|c| &c[start..]), resolution_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Compensation {
    /// Period in groups of `frame_size` packets.
    pub period_groups: usize,
    pub period_samples: usize,
    /// Normalized autocorrelation of the distance sequence at that period.
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub frame_size: usize,
    /// Distances between the starts of consecutive groups, seconds.
    pub distances_s: Vec<f64>,
    pub running_mean_s: Vec<f64>,
    pub mean_distance_s: f64,
    /// `frame_size / expected rate`.
    pub expected_distance_s: f64,
    /// Largest deviation of the running mean from the expected distance,
    /// relative, after the first detected period (or first group).
    pub running_mean_max_rel_dev: f64,
    pub compensation: Option<Compensation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingOptions {
    pub frame_size: usize,
    /// Rate used for the expected distance; the measured mean when `None`.
    pub expected_rate_hz: Option<f64>,
    /// Distance variations at or below this are treated as clock noise.
    pub jitter_floor_s: f64,
    /// Largest compensation period searched, in groups.
    pub max_period_groups: usize,
}

impl Default for TimingOptions {
    fn default() -> Self {
        Self { frame_size: 4, expected_rate_hz: None, jitter_floor_s: 1e-6, max_period_groups: 64 }
    }
}

/// Inter-arrival distances between consecutive groups of packets, and a
/// search for a periodic pacing correction.
///
/// A correction is reported when the centered distance sequence is
/// strongly periodic (autocorrelation ≥ 0.5 at some lag) and the running
/// mean stays within 1% of the expected distance.
pub fn timing_report(recv_times_ns: &[u64], opts: &TimingOptions) -> Result<TimingReport, IngestError> {
    let fs = opts.frame_size.max(1);
    if recv_times_ns.len() < MIN_TIMING_PACKETS {
        return Err(IngestError::InsufficientData(format!(
            "{} packets, need {MIN_TIMING_PACKETS}",
            recv_times_ns.len()
        )));
    }
    let starts: Vec<u64> = recv_times_ns.iter().step_by(fs).copied().collect();
    let distances_s: Vec<f64> = starts
        .windows(2)
        .map(|w| w[1].saturating_sub(w[0]) as f64 * 1e-9)
        .collect();
    let n = distances_s.len();
    let mut running_mean_s = Vec::with_capacity(n);
    let mut acc = 0.0;
    for (i, d) in distances_s.iter().enumerate() {
        acc += d;
        running_mean_s.push(acc / (i + 1) as f64);
    }
    let mean_distance_s = acc / n as f64;
    let expected_distance_s = match opts.expected_rate_hz {
        Some(rate) => fs as f64 / rate,
        None => mean_distance_s,
    };

    let compensation = detect_period(&distances_s, mean_distance_s, opts);
    let settle = compensation.map(|c| c.period_groups).unwrap_or(1).min(n) - 1;
    let running_mean_max_rel_dev = running_mean_s[settle..]
        .iter()
        .map(|m| (m - expected_distance_s).abs() / expected_distance_s)
        .fold(0.0, f64::max);
    let compensation = compensation.filter(|_| running_mean_max_rel_dev <= 0.01);

    Ok(TimingReport {
        frame_size: fs,
        distances_s,
        running_mean_s,
        mean_distance_s,
        expected_distance_s,
        running_mean_max_rel_dev,
        compensation,
    })
}

fn detect_period(d: &[f64], mean: f64, opts: &TimingOptions) -> Option<Compensation> {
    let (lo, hi) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if hi - lo <= 2.0 * opts.jitter_floor_s {
        return None;
    }
    let x: Vec<f64> = d.iter().map(|v| v - mean).collect();
    let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let max_lag = opts.max_period_groups.min(x.len() / 4);
    let acf: Vec<(usize, f64)> = (2..=max_lag)
        .map(|lag| {
            let m = x.len() - lag;
            let c = x[..m].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum::<f64>() / m as f64;
            (lag, c / var)
        })
        .collect();
    let best = acf.iter().map(|&(_, r)| r).fold(f64::NEG_INFINITY, f64::max);
    if best < 0.5 {
        return None;
    }
    // Multiples of the true period correlate as well; take the shortest.
    let &(lag, strength) = acf.iter().find(|&&(_, r)| r >= 0.9 * best)?;
    Some(Compensation { period_groups: lag, period_samples: lag * opts.frame_size, strength })
}

/// Running counters for a packet stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub packets_total: u64,
    pub packets_dropped: u64,
    pub observed_rate_hz: f64,
    pub rate_ci_hz: (f64, f64),
    /// Frames rejected for a bad CRC or counter.
    pub counter_errors: u64,
    pub quality_latest: Vec<Option<u16>>,
}

impl StreamStats {
    pub fn quality_status(&self) -> Vec<Option<QualityStatus>> {
        self.quality_latest.iter().map(|q| q.map(quality_status)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct StatsTracker {
    resolution_s: f64,
    total: u64,
    dropped: u64,
    corrupt: u64,
    last_counter: Option<u8>,
    first_time: Option<u64>,
    last_time: u64,
    quality: Vec<Option<u16>>,
}

impl StatsTracker {
    pub fn new(channels: usize, resolution_s: f64) -> Self {
        Self {
            resolution_s,
            total: 0,
            dropped: 0,
            corrupt: 0,
            last_counter: None,
            first_time: None,
            last_time: 0,
            quality: vec![None; channels],
        }
    }

    /// Returns the number of packets inferred lost just before `p`.
    pub fn observe(&mut self, p: &EegPacket) -> u64 {
        let gap = self.last_counter.map(|c| dropped_between(c, p.counter)).unwrap_or(0);
        self.dropped += gap;
        self.last_counter = Some(p.counter);
        self.total += 1;
        self.first_time.get_or_insert(p.recv_time_ns);
        self.last_time = p.recv_time_ns;
        if let Some(q) = p.quality {
            if let Some(slot) = self.quality.get_mut(q.channel as usize) {
                *slot = Some(q.value);
            }
        }
        gap
    }

    pub fn set_corrupt(&mut self, corrupt: u64) {
        self.corrupt = corrupt;
    }

    pub fn snapshot(&self) -> StreamStats {
        let span = self.first_time.map(|t| self.last_time.saturating_sub(t) as f64 * 1e-9).unwrap_or(0.0);
        let intervals = (self.total.saturating_sub(1) + self.dropped) as f64;
        let (rate, ci) = if span > 0.0 {
            let hi = if span > self.resolution_s { intervals / (span - self.resolution_s) } else { f64::INFINITY };
            (intervals / span, (intervals / (span + self.resolution_s), hi))
        } else {
            (0.0, (0.0, 0.0))
        };
        StreamStats {
            packets_total: self.total,
            packets_dropped: self.dropped,
            observed_rate_hz: rate,
            rate_ci_hz: ci,
            counter_errors: self.corrupt,
            quality_latest: self.quality.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{RawFrame, StreamWriter};
    use std::io::Cursor;

    fn stream(frames: usize) -> Vec<u8> {
        let h = StreamHeader::with_channels(vec!["A".into(), "B".into()]);
        let mut w = StreamWriter::new(h, Vec::new()).unwrap();
        for k in 0..frames {
            w.write_frame(&RawFrame {
                counter: (k % 129) as u8,
                event: 0,
                quality: None,
                stamp_ns: k as u64 * 1000,
                samples: vec![k as i16, -(k as i16)],
            })
            .unwrap();
        }
        w.into_inner().unwrap()
    }

    #[test]
    fn file_with_ten_frames_yields_ten_packets() {
        let mut r = PacketReader::new(Cursor::new(stream(10)), Clocking::Recorded { speed: 0.0 }).unwrap();
        let mut n = 0;
        while let Some(p) = r.next_packet().unwrap() {
            assert_eq!(p.seq, n);
            n += 1;
        }
        assert_eq!(n, 10);
        assert!(r.next_packet().unwrap().is_none());
    }

    #[test]
    fn corrupt_frame_is_skipped_and_counted() {
        let mut bytes = stream(5);
        let h = StreamHeader::with_channels(vec!["A".into(), "B".into()]);
        let off = h.encoded_len() + 2 * h.frame_size() + 14;
        bytes[off] ^= 0x40;
        let mut r = PacketReader::new(Cursor::new(bytes), Clocking::Recorded { speed: 0.0 }).unwrap();
        let counters: Vec<u8> = r.by_ref_packets().map(|p| p.counter).collect();
        assert_eq!(counters, vec![0, 1, 3, 4]);
        assert_eq!(r.corrupt_frames(), 1);
    }

    impl<R: Read> PacketReader<R> {
        fn by_ref_packets(&mut self) -> impl Iterator<Item = EegPacket> + '_ {
            std::iter::from_fn(move || self.next_packet().unwrap())
        }
    }

    #[test]
    fn trailing_partial_frame() {
        let mut bytes = stream(3);
        bytes.truncate(bytes.len() - 5);
        let mut r = PacketReader::new(Cursor::new(bytes), Clocking::Recorded { speed: 0.0 }).unwrap();
        assert!(r.next_packet().unwrap().is_some());
        assert!(r.next_packet().unwrap().is_some());
        assert!(matches!(r.next_packet(), Err(IngestError::TruncatedStream { .. })));
    }

    #[test]
    fn gap_examples() {
        assert_eq!(detect_gaps(&[0, 1, 2, 3]).iter().sum::<u64>(), 0);
        assert_eq!(detect_gaps(&[0, 1, 2, 4]).iter().sum::<u64>(), 1);
        assert_eq!(detect_gaps(&[128, 0]), vec![0]);
        assert_eq!(detect_gaps(&[128, 1]), vec![1]);
        // A repeated counter reads as a full wrap of 128 lost packets.
        assert_eq!(detect_gaps(&[5, 5]), vec![128]);
    }

    #[test]
    fn rate_of_exact_128hz() {
        let times: Vec<u64> = (0..1281u64).map(|k| k * 7_812_500).collect();
        let est = estimate_rate(&times, None, 1e-3).unwrap();
        assert_eq!(est.rate_hz, 128.0);
        assert!(est.ci_low_hz < 128.0 && est.ci_high_hz > 128.0);
        let half_width = 128.0 * 1e-3 / 10.0;
        assert!((est.ci_high_hz - 128.0 - half_width).abs() < 1e-4);
    }

    #[test]
    fn rate_needs_ten_seconds() {
        let times: Vec<u64> = (0..100u64).map(|k| k * 7_812_500).collect();
        assert!(matches!(estimate_rate(&times, None, 1e-3), Err(IngestError::InsufficientData(_))));
        assert!(matches!(estimate_rate(&[0], None, 1e-3), Err(IngestError::InsufficientData(_))));
    }

    #[test]
    fn windowed_rate_uses_tail() {
        // 20 s at 100 Hz followed by 20 s at 200 Hz.
        let mut times: Vec<u64> = (0..2000u64).map(|k| k * 10_000_000).collect();
        let t0 = *times.last().unwrap();
        times.extend((1..=4000u64).map(|k| t0 + k * 5_000_000));
        let est = estimate_rate_windowed(&times, None, 15.0, 1e-6).unwrap();
        assert!((est.rate_hz - 200.0).abs() < 1e-6);
    }

    #[test]
    fn constant_125hz_has_no_compensation() {
        let times: Vec<u64> = (0..1000u64).map(|k| k * 8_000_000).collect();
        let r = timing_report(&times, &TimingOptions::default()).unwrap();
        assert!(r.compensation.is_none());
        assert!((r.mean_distance_s - 0.032).abs() < 1e-12);
        assert!(timing_report(&times[..63], &TimingOptions::default()).is_err());
    }

    #[test]
    fn source_spec_parsing() {
        assert_eq!(
            "file:/tmp/a.sbsr".parse::<SourceSpec>().unwrap(),
            SourceSpec::File { path: "/tmp/a.sbsr".into() }
        );
        assert_eq!(
            "tcp:127.0.0.1:9000".parse::<SourceSpec>().unwrap(),
            SourceSpec::Tcp { host: "127.0.0.1".into(), port: 9000 }
        );
        assert_eq!("sim:erd".parse::<SourceSpec>().unwrap(), SourceSpec::Sim { scenario: "erd".into() });
        for bad in ["file:", "tcp:host", "tcp:host:x", "udp:x", "nothing"] {
            assert!(bad.parse::<SourceSpec>().is_err(), "{bad}");
        }
        let s = SourceSpec::Tcp { host: "h".into(), port: 1 };
        assert_eq!(s.to_string().parse::<SourceSpec>().unwrap(), s);
    }

    #[test]
    fn tracker_counts_drops_and_quality() {
        let mut t = StatsTracker::new(2, 1e-3);
        for (i, c) in [0u8, 1, 3, 4].into_iter().enumerate() {
            t.observe(&EegPacket {
                seq: i as u64,
                values_uv: vec![0.0; 2],
                counter: c,
                quality: Some(crate::wire::QualitySlot { channel: (i % 2) as u8, value: 400 + i as u16 * 10 }),
                event: 0,
                recv_time_ns: i as u64,
            });
        }
        let s = t.snapshot();
        assert_eq!(s.packets_total, 4);
        assert_eq!(s.packets_dropped, 1);
        assert_eq!(s.quality_latest, vec![Some(420), Some(430)]);
        assert_eq!(s.quality_status(), vec![Some(QualityStatus::Good), Some(QualityStatus::Good)]);
    }
}
