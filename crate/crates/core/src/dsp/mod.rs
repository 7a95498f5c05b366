//! Framing, filtering, spectra and epoching.

mod epoch;
mod filter;
mod frame;
mod spectrum;

use thiserror::Error;

pub use epoch::{
    epoch_stream, write_epochs_csv, write_samples_csv, ContinuousSignal, Epoch, EpochOutcome, RejectedEvent,
    TrialSet,
};
pub use filter::{
    bandpass, filtfilt, BandpassSpec, Biquad, CausalFilter, FilterDesign, FilterMode, MultiChannelFilter, Sos,
};
pub use frame::{Frame, FrameBuffer};
pub use spectrum::{hann, power_fft, welch, Spectrum};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid band {low_hz}-{high_hz} Hz (order {order}) for rate {rate_hz} Hz")]
    InvalidBand { low_hz: f64, high_hz: f64, order: usize, rate_hz: f64 },
    #[error("window length {0} must be a power of two >= 2")]
    WindowLength(usize),
    #[error("invalid frame geometry: window {window_len}, hop {hop}, channels {channels}")]
    FrameGeometry { window_len: usize, hop: usize, channels: usize },
    #[error("event at sample {sample} needs {pre} samples before and {post} after; signal has {len}")]
    EventOutOfBounds { sample: u64, pre: usize, post: usize, len: u64 },
    #[error("crop {start_s}..{end_s} s falls outside the epoch")]
    CropOutOfRange { start_s: f64, end_s: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
