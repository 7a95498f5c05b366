use nalgebra::DMatrix;

use super::DspError;

/// A window of consecutive samples, channels × `window_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Index of the first sample in the window.
    pub start_sample: u64,
    pub data: DMatrix<f64>,
}

/// Ring buffer that emits overlapping windows of the most recent samples.
///
/// The first frame is emitted once `window_len` samples have arrived, then
/// one frame per `hop` further samples.
#[derive(Debug, Clone)]
pub struct FrameBuffer {
    window_len: usize,
    hop: usize,
    channels: usize,
    ring: Vec<f64>,
    head: usize,
    received: u64,
    since_emit: usize,
    emitted: u64,
}

impl FrameBuffer {
    pub fn new(window_len: usize, hop: usize, channels: usize) -> Result<Self, DspError> {
        if window_len == 0 || hop == 0 || hop > window_len || channels == 0 {
            return Err(DspError::FrameGeometry { window_len, hop, channels });
        }
        Ok(Self {
            window_len,
            hop,
            channels,
            ring: vec![0.0; window_len * channels],
            head: 0,
            received: 0,
            since_emit: 0,
            emitted: 0,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn emitted_frames(&self) -> u64 {
        self.emitted
    }

    pub fn push(&mut self, sample: &[f64]) -> Option<Frame> {
        assert_eq!(sample.len(), self.channels, "sample width");
        let off = self.head * self.channels;
        self.ring[off..off + self.channels].copy_from_slice(sample);
        self.head = (self.head + 1) % self.window_len;
        self.received += 1;
        self.since_emit += 1;

        let ready = if self.emitted == 0 {
            self.received == self.window_len as u64
        } else {
            self.since_emit == self.hop
        };
        if !ready {
            return None;
        }
        self.since_emit = 0;
        self.emitted += 1;
        // `head` now points at the oldest sample.
        let data = DMatrix::from_fn(self.channels, self.window_len, |c, t| {
            self.ring[((self.head + t) % self.window_len) * self.channels + c]
        });
        Some(Frame { start_sample: self.received - self.window_len as u64, data })
    }
}
