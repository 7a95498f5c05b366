//! Continuous signal reconstruction from packets and event-locked epochs.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::filter::{filtfilt, BandpassSpec, Sos};
use super::DspError;
use crate::event::{ClassLabel, EventMarker};
use crate::ingest::dropped_between;
use crate::wire::{EegPacket, StreamHeader};

/// Samples on a regular grid, channels × samples. Samples lost in
/// transmission are filled by holding the previous value so that sample
/// indices stay aligned with the device clock.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSignal {
    pub rate_hz: f64,
    pub channel_names: Vec<String>,
    pub data: DMatrix<f64>,
    pub times_ns: Vec<u64>,
    pub events: Vec<EventMarker>,
    pub filled_samples: u64,
}

impl ContinuousSignal {
    pub fn from_packets<I>(header: &StreamHeader, packets: I) -> Self
    where
        I: IntoIterator<Item = EegPacket>,
    {
        let nc = header.channel_count;
        let mut flat: Vec<f64> = Vec::new();
        let mut times: Vec<u64> = Vec::new();
        let mut events = Vec::new();
        let mut filled = 0u64;
        let mut last_counter: Option<u8> = None;
        for p in packets {
            if let Some(prev) = last_counter {
                let gap = dropped_between(prev, p.counter);
                if gap > 0 {
                    let t0 = *times.last().unwrap();
                    let step = p.recv_time_ns.saturating_sub(t0) / (gap + 1);
                    let held: Vec<f64> = flat[flat.len() - nc..].to_vec();
                    for k in 1..=gap {
                        flat.extend_from_slice(&held);
                        times.push(t0 + k * step);
                    }
                    filled += gap;
                }
            }
            last_counter = Some(p.counter);
            if p.event != 0 {
                let label = header
                    .event_labels
                    .get(&p.event)
                    .cloned()
                    .unwrap_or_else(|| format!("event{}", p.event));
                events.push(EventMarker {
                    sample: times.len() as u64,
                    code: p.event,
                    label,
                    stream_time_ns: p.recv_time_ns,
                });
            }
            flat.extend_from_slice(&p.values_uv);
            times.push(p.recv_time_ns);
        }
        let n = times.len();
        Self {
            rate_hz: header.nominal_rate_hz,
            channel_names: header.channel_names.clone(),
            data: DMatrix::from_vec(nc, n, flat),
            times_ns: times,
            events,
            filled_samples: filled,
        }
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub trial_id: usize,
    pub class_label: Option<ClassLabel>,
    pub event_sample: u64,
    pub event_time_ns: u64,
    /// channels × samples; column `pre_samples` is the event.
    pub data: DMatrix<f64>,
}

/// Event-locked epochs of equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSet {
    pub rate_hz: f64,
    pub channel_names: Vec<String>,
    /// Samples before the event in each epoch.
    pub pre_samples: usize,
    pub epochs: Vec<Epoch>,
}

#[derive(Debug)]
pub struct RejectedEvent {
    pub marker: EventMarker,
    pub reason: DspError,
}

#[derive(Debug)]
pub struct EpochOutcome {
    pub trials: TrialSet,
    pub rejected: Vec<RejectedEvent>,
}

/// One epoch of `[event - t_pre, event + t_post)` per event. Events whose
/// window leaves the signal are rejected and reported, not fatal.
pub fn epoch_stream(signal: &ContinuousSignal, events: &[EventMarker], t_pre_s: f64, t_post_s: f64) -> EpochOutcome {
    let pre = (t_pre_s * signal.rate_hz).round() as usize;
    let post = (t_post_s * signal.rate_hz).round() as usize;
    let n = signal.len() as u64;
    let mut epochs = Vec::new();
    let mut rejected = Vec::new();
    for (trial_id, ev) in events.iter().enumerate() {
        let in_bounds = ev.sample >= pre as u64 && ev.sample + post as u64 <= n;
        if !in_bounds {
            rejected.push(RejectedEvent {
                marker: ev.clone(),
                reason: DspError::EventOutOfBounds { sample: ev.sample, pre, post, len: n },
            });
            continue;
        }
        let start = ev.sample as usize - pre;
        epochs.push(Epoch {
            trial_id,
            class_label: ev.class(),
            event_sample: ev.sample,
            event_time_ns: ev.stream_time_ns,
            data: signal.data.columns(start, pre + post).into_owned(),
        });
    }
    EpochOutcome {
        trials: TrialSet { rate_hz: signal.rate_hz, channel_names: signal.channel_names.clone(), pre_samples: pre, epochs },
        rejected,
    }
}

impl TrialSet {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn epoch_len(&self) -> usize {
        self.epochs.first().map(|e| e.data.ncols()).unwrap_or(0)
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn count(&self, class: ClassLabel) -> usize {
        self.epochs.iter().filter(|e| e.class_label == Some(class)).count()
    }

    pub fn with_classes(&self, classes: &[ClassLabel]) -> TrialSet {
        TrialSet {
            epochs: self
                .epochs
                .iter()
                .filter(|e| e.class_label.is_some_and(|c| classes.contains(&c)))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// Zero-phase band-pass of every channel of every epoch.
    pub fn bandpassed(&self, spec: &BandpassSpec) -> Result<TrialSet, DspError> {
        let sos = Arc::new(Sos::butterworth_bandpass(spec, self.rate_hz)?);
        let epochs = self
            .epochs
            .iter()
            .map(|e| {
                let mut data = e.data.clone();
                for mut row in data.row_iter_mut() {
                    let x: Vec<f64> = row.iter().copied().collect();
                    for (dst, v) in row.iter_mut().zip(filtfilt(sos.clone(), &x)) {
                        *dst = v;
                    }
                }
                Epoch { data, ..e.clone() }
            })
            .collect();
        Ok(TrialSet { epochs, ..self.clone() })
    }

    /// Keeps `[start_s, end_s)` relative to the event.
    pub fn cropped(&self, start_s: f64, end_s: f64) -> Result<TrialSet, DspError> {
        let first = self.pre_samples as i64 + (start_s * self.rate_hz).round() as i64;
        let last = self.pre_samples as i64 + (end_s * self.rate_hz).round() as i64;
        let len = self.epoch_len() as i64;
        if first < 0 || last > len || first >= last {
            return Err(DspError::CropOutOfRange { start_s, end_s });
        }
        let epochs = self
            .epochs
            .iter()
            .map(|e| Epoch { data: e.data.columns(first as usize, (last - first) as usize).into_owned(), ..e.clone() })
            .collect();
        Ok(TrialSet { epochs, pre_samples: (self.pre_samples as i64 - first).max(0) as usize, ..self.clone() })
    }
}

/// One row per sample, one column per channel.
pub fn write_samples_csv<W: Write>(w: W, channel_names: &[String], data: &DMatrix<f64>) -> Result<(), DspError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(channel_names)?;
    for col in data.column_iter() {
        out.write_record(col.iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Epochs stacked vertically with `trial_id`, `class` and `t_s` leading.
pub fn write_epochs_csv<W: Write>(w: W, trials: &TrialSet) -> Result<(), DspError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["trial_id".to_string(), "class".to_string(), "t_s".to_string()];
    header.extend(trials.channel_names.iter().cloned());
    out.write_record(&header)?;
    for e in &trials.epochs {
        let class = e.class_label.map(|c| c.name()).unwrap_or("");
        for (i, col) in e.data.column_iter().enumerate() {
            let t = (i as f64 - trials.pre_samples as f64) / trials.rate_hz;
            let mut rec = vec![e.trial_id.to_string(), class.to_string(), t.to_string()];
            rec.extend(col.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
    }
    out.flush()?;
    Ok(())
}
