//! SBSR v1: an open, CRC-protected little-endian stream format for
//! low-density EEG headsets.
//!
//! A stream is a header chunk followed by fixed-size frames:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SBSR"
//! 4       4     u32 LE, length L of the JSON header text
//! 8       L     UTF-8 JSON StreamHeader
//! 8+L     F*k   k frames of F = 15 + 2*N_c bytes each
//! ```
//!
//! Frame layout (all little-endian):
//!
//! ```text
//! offset   size   field
//! 0        1      counter, 0..=128
//! 1        1      event code (0 = none)
//! 2        1      quality channel index (0xFF = no quality slot)
//! 3        2      u16 quality value
//! 5        8      u64 host timestamp, nanoseconds
//! 13       2*N_c  i16 raw ADC sample per channel
//! 13+2*N_c 2      CRC-16/CCITT-FALSE over bytes [0, 13+2*N_c)
//! ```
//!
//! The frame layout is our own; real headsets use a proprietary encrypted
//! packet that this format stands in for.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crc::{Crc, CRC_16_IBM_3740};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SBSR";
pub const FORMAT_VERSION: u32 = 1;

/// Number of distinct counter values; the counter wraps 128 -> 0.
pub const COUNTER_MODULUS: u16 = 129;
pub const MAX_COUNTER: u8 = 128;

/// Quality values strictly above this are a good electrode contact.
pub const QUALITY_THRESHOLD: u16 = 407;

const NO_QUALITY: u8 = 0xFF;
const FRAME_PREFIX: usize = 13;
const CRC_LEN: usize = 2;
const MAX_HEADER_LEN: u32 = 1 << 20;

/// CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF).
const FRAME_CRC: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

/// The 14-channel montage of consumer headsets, in stream order.
pub const DEFAULT_CHANNELS: [&str; 14] = [
    "AF3", "F7", "F3", "FC5", "T7", "P7", "O1", "O2", "P8", "T8", "FC6", "F4", "F8", "AF4",
];

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame has {found} channels, stream declares {expected}")]
    ChannelCountMismatch { expected: usize, found: usize },
    #[error("counter {0} outside 0..=128")]
    CounterOutOfRange(u8),
    #[error("quality channel {channel} outside 0..{channels}")]
    QualityChannelOutOfRange { channel: u8, channels: usize },
    #[error("CRC mismatch: frame carries {found:#06x}, payload hashes to {computed:#06x}")]
    BadCrc { found: u16, computed: u16 },
    #[error("truncated frame: need {expected} bytes, got {found}")]
    TruncatedFrame { expected: usize, found: usize },
    #[error("not an SBSR stream (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("invalid stream header: {0}")]
    InvalidHeader(String),
    #[error("header JSON: {0}")]
    HeaderJson(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Stream-level constants needed to interpret frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub version: u32,
    pub channel_count: usize,
    pub channel_names: Vec<String>,
    pub nominal_rate_hz: f64,
    /// Raw ADC value corresponding to 0 µV.
    pub adc_offset: f64,
    /// Microvolts per ADC step.
    pub adc_scale: f64,
    pub device_id: String,
    /// Quality multiplexing schedule; v1 cycles one channel per frame.
    #[serde(default = "default_quality_schedule")]
    pub quality_schedule: String,
    /// Event code -> label for the per-frame event channel.
    #[serde(default)]
    pub event_labels: BTreeMap<u8, String>,
}

fn default_quality_schedule() -> String {
    "round-robin".to_string()
}

impl Default for StreamHeader {
    fn default() -> Self {
        Self::with_channels(DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect())
    }
}

impl StreamHeader {
    pub fn with_channels(channel_names: Vec<String>) -> Self {
        Self {
            version: FORMAT_VERSION,
            channel_count: channel_names.len(),
            channel_names,
            nominal_rate_hz: 128.0,
            adc_offset: 8192.0,
            adc_scale: 0.51,
            device_id: "sbs-sim".to_string(),
            quality_schedule: default_quality_schedule(),
            event_labels: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), WireError> {
        if self.version != FORMAT_VERSION {
            return Err(WireError::InvalidHeader(format!(
                "unsupported version {}",
                self.version
            )));
        }
        if self.channel_count == 0 || self.channel_count >= NO_QUALITY as usize {
            return Err(WireError::InvalidHeader(format!(
                "channel_count {} outside 1..255",
                self.channel_count
            )));
        }
        if self.channel_names.len() != self.channel_count {
            return Err(WireError::InvalidHeader(format!(
                "{} channel names for {} channels",
                self.channel_names.len(),
                self.channel_count
            )));
        }
        if !(self.nominal_rate_hz.is_finite() && self.nominal_rate_hz > 0.0) {
            return Err(WireError::InvalidHeader("nominal_rate_hz must be > 0".into()));
        }
        if !(self.adc_scale.is_finite() && self.adc_scale > 0.0 && self.adc_offset.is_finite()) {
            return Err(WireError::InvalidHeader("ADC constants must be finite, scale > 0".into()));
        }
        Ok(())
    }

    pub fn frame_size(&self) -> usize {
        frame_size(self.channel_count)
    }

    /// Size in bytes of the serialized header chunk (magic, length, JSON).
    pub fn encoded_len(&self) -> usize {
        8 + self.json().len()
    }

    fn json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("header serializes")
    }

    pub fn to_microvolts(&self, raw: i16) -> f64 {
        (raw as f64 - self.adc_offset) * self.adc_scale
    }

    /// Nearest representable ADC value, saturating at the i16 range.
    pub fn to_raw(&self, microvolts: f64) -> i16 {
        let raw = (microvolts / self.adc_scale + self.adc_offset).round();
        raw.clamp(i16::MIN as f64, i16::MAX as f64) as i16
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<usize, WireError> {
        self.validate()?;
        let json = self.json();
        w.write_all(&MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        Ok(8 + json.len())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, WireError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(WireError::BadMagic(magic));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let len = u32::from_le_bytes(len);
        if len > MAX_HEADER_LEN {
            return Err(WireError::InvalidHeader(format!("header length {len} too large")));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json)?;
        let header: StreamHeader = serde_json::from_slice(&json)?;
        header.validate()?;
        Ok(header)
    }
}

pub fn frame_size(channels: usize) -> usize {
    FRAME_PREFIX + 2 * channels + CRC_LEN
}

/// One multiplexed electrode-quality reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualitySlot {
    pub channel: u8,
    pub value: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QualityStatus {
    Good,
    Poor,
}

pub fn quality_status(value: u16) -> QualityStatus {
    if value > QUALITY_THRESHOLD {
        QualityStatus::Good
    } else {
        QualityStatus::Poor
    }
}

/// Channel whose quality value rides in the frame with this running index.
pub fn quality_channel_for(frame_index: u64, channels: usize) -> u8 {
    (frame_index % channels as u64) as u8
}

/// A frame as it appears on the wire, before scaling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub counter: u8,
    pub event: u8,
    pub quality: Option<QualitySlot>,
    pub stamp_ns: u64,
    pub samples: Vec<i16>,
}

pub fn encode_frame(header: &StreamHeader, frame: &RawFrame) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(header.frame_size());
    encode_frame_into(header, frame, &mut out)?;
    Ok(out)
}

pub fn encode_frame_into(
    header: &StreamHeader,
    frame: &RawFrame,
    out: &mut Vec<u8>,
) -> Result<(), WireError> {
    if frame.counter > MAX_COUNTER {
        return Err(WireError::CounterOutOfRange(frame.counter));
    }
    if frame.samples.len() != header.channel_count {
        return Err(WireError::ChannelCountMismatch {
            expected: header.channel_count,
            found: frame.samples.len(),
        });
    }
    let start = out.len();
    out.push(frame.counter);
    out.push(frame.event);
    match frame.quality {
        Some(q) => {
            if q.channel as usize >= header.channel_count {
                return Err(WireError::QualityChannelOutOfRange {
                    channel: q.channel,
                    channels: header.channel_count,
                });
            }
            out.push(q.channel);
            out.extend_from_slice(&q.value.to_le_bytes());
        }
        None => {
            out.push(NO_QUALITY);
            out.extend_from_slice(&0u16.to_le_bytes());
        }
    }
    out.extend_from_slice(&frame.stamp_ns.to_le_bytes());
    for s in &frame.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    let crc = FRAME_CRC.checksum(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(())
}

/// Parses one frame. Total over arbitrary input: every byte string yields
/// either a frame or an error.
pub fn decode_frame(header: &StreamHeader, bytes: &[u8]) -> Result<RawFrame, WireError> {
    let size = header.frame_size();
    if bytes.len() < size {
        return Err(WireError::TruncatedFrame { expected: size, found: bytes.len() });
    }
    let bytes = &bytes[..size];
    let (payload, crc) = bytes.split_at(size - CRC_LEN);
    let found = u16::from_le_bytes([crc[0], crc[1]]);
    let computed = FRAME_CRC.checksum(payload);
    if found != computed {
        return Err(WireError::BadCrc { found, computed });
    }

    let counter = payload[0];
    if counter > MAX_COUNTER {
        return Err(WireError::CounterOutOfRange(counter));
    }
    let quality = match payload[2] {
        NO_QUALITY => None,
        channel if (channel as usize) < header.channel_count => Some(QualitySlot {
            channel,
            value: u16::from_le_bytes([payload[3], payload[4]]),
        }),
        channel => {
            return Err(WireError::QualityChannelOutOfRange {
                channel,
                channels: header.channel_count,
            })
        }
    };
    let mut stamp = [0u8; 8];
    stamp.copy_from_slice(&payload[5..FRAME_PREFIX]);
    let samples = payload[FRAME_PREFIX..]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(RawFrame {
        counter,
        event: payload[1],
        quality,
        stamp_ns: u64::from_le_bytes(stamp),
        samples,
    })
}

/// A scaled sample across all channels, as handed to processing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EegPacket {
    pub seq: u64,
    pub values_uv: Vec<f64>,
    pub counter: u8,
    pub quality: Option<QualitySlot>,
    pub event: u8,
    /// Monotonic receive time in nanoseconds.
    pub recv_time_ns: u64,
}

impl EegPacket {
    pub fn from_frame(header: &StreamHeader, frame: &RawFrame, seq: u64, recv_time_ns: u64) -> Self {
        Self {
            seq,
            values_uv: frame.samples.iter().map(|&s| header.to_microvolts(s)).collect(),
            counter: frame.counter,
            quality: frame.quality,
            event: frame.event,
            recv_time_ns,
        }
    }

    /// Re-quantizes the packet into a frame stamped with its receive time.
    pub fn to_frame(&self, header: &StreamHeader) -> RawFrame {
        RawFrame {
            counter: self.counter,
            event: self.event,
            quality: self.quality,
            stamp_ns: self.recv_time_ns,
            samples: self.values_uv.iter().map(|&v| header.to_raw(v)).collect(),
        }
    }
}

/// Writes a header followed by frames.
pub struct StreamWriter<W: Write> {
    header: StreamHeader,
    inner: W,
    buf: Vec<u8>,
    frames: u64,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(header: StreamHeader, mut inner: W) -> Result<Self, WireError> {
        header.write_to(&mut inner)?;
        let buf = Vec::with_capacity(header.frame_size());
        Ok(Self { header, inner, buf, frames: 0 })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    pub fn write_frame(&mut self, frame: &RawFrame) -> Result<(), WireError> {
        self.buf.clear();
        encode_frame_into(&self.header, frame, &mut self.buf)?;
        self.inner.write_all(&self.buf)?;
        self.frames += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> u64 {
        self.frames
    }

    pub fn flush(&mut self) -> Result<(), WireError> {
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(mut self) -> Result<W, WireError> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(channels: usize) -> StreamHeader {
        StreamHeader::with_channels((0..channels).map(|i| format!("C{i}")).collect())
    }

    fn frame(channels: usize) -> RawFrame {
        RawFrame {
            counter: 17,
            event: 2,
            quality: Some(QualitySlot { channel: 3, value: 512 }),
            stamp_ns: 123_456_789,
            samples: (0..channels as i16).map(|i| i * 100 - 300).collect(),
        }
    }

    #[test]
    fn quality_threshold_is_strict() {
        assert_eq!(quality_status(408), QualityStatus::Good);
        assert_eq!(quality_status(407), QualityStatus::Poor);
        assert_eq!(quality_status(0), QualityStatus::Poor);
    }

    #[test]
    fn counter_129_rejected() {
        let h = header(14);
        let mut f = frame(14);
        f.counter = 129;
        assert!(matches!(encode_frame(&h, &f), Err(WireError::CounterOutOfRange(129))));
    }

    #[test]
    fn channel_count_mismatch() {
        let h = header(14);
        let f = frame(13);
        assert!(matches!(
            encode_frame(&h, &f),
            Err(WireError::ChannelCountMismatch { expected: 14, found: 13 })
        ));
    }

    #[test]
    fn zero_samples_scale_to_negative_offset() {
        let mut h = header(14);
        h.adc_offset = 8192.0;
        h.adc_scale = 0.51;
        let f = RawFrame { counter: 0, event: 0, quality: None, stamp_ns: 0, samples: vec![0; 14] };
        let decoded = decode_frame(&h, &encode_frame(&h, &f).unwrap()).unwrap();
        let p = EegPacket::from_frame(&h, &decoded, 0, 0);
        for v in p.values_uv {
            assert_eq!(v, (0.0 - 8192.0) * 0.51);
        }
    }

    #[test]
    fn every_single_bit_flip_is_detected() {
        let h = header(14);
        let bytes = encode_frame(&h, &frame(14)).unwrap();
        for bit in 0..(bytes.len() - CRC_LEN) * 8 {
            let mut b = bytes.clone();
            b[bit / 8] ^= 1 << (bit % 8);
            assert!(matches!(decode_frame(&h, &b), Err(WireError::BadCrc { .. })), "bit {bit}");
        }
    }

    #[test]
    fn truncated() {
        let h = header(4);
        let bytes = encode_frame(&h, &frame(4)).unwrap();
        assert!(matches!(
            decode_frame(&h, &bytes[..bytes.len() - 1]),
            Err(WireError::TruncatedFrame { .. })
        ));
    }

    #[test]
    fn crc_check_value() {
        // Standard check value for CRC-16/CCITT-FALSE.
        assert_eq!(FRAME_CRC.checksum(b"123456789"), 0x29B1);
    }

    #[test]
    fn stream_offsets_are_linear_in_frame_count() {
        let h = header(14);
        let mut w = StreamWriter::new(h.clone(), Vec::new()).unwrap();
        for k in 0..10u64 {
            w.write_frame(&frame(14)).unwrap();
            assert_eq!(w.frames_written(), k + 1);
        }
        let bytes = w.into_inner().unwrap();
        assert_eq!(bytes.len(), h.encoded_len() + 10 * h.frame_size());
        assert_eq!(h.frame_size(), 43);
    }

    #[test]
    fn header_round_trip_and_validation() {
        let h = header(3);
        let mut buf = Vec::new();
        let n = h.write_to(&mut buf).unwrap();
        assert_eq!(n, buf.len());
        assert_eq!(StreamHeader::read_from(&buf[..]).unwrap(), h);

        let mut bad = h.clone();
        bad.channel_names.pop();
        assert!(matches!(bad.validate(), Err(WireError::InvalidHeader(_))));
        let mut bad = h;
        bad.nominal_rate_hz = 0.0;
        assert!(bad.validate().is_err());
        assert!(matches!(
            StreamHeader::read_from(&b"XXXX\0\0\0\0"[..]),
            Err(WireError::BadMagic(_))
        ));
    }

    #[test]
    fn round_robin_quality_covers_all_channels() {
        let n = 14;
        for start in [0u64, 5, 1_000_003] {
            let mut seen: Vec<u8> = (start..start + n as u64).map(|k| quality_channel_for(k, n)).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..n as u8).collect::<Vec<_>>());
        }
    }

    fn arb_frame(channels: usize) -> impl Strategy<Value = RawFrame> {
        (
            0u8..=128,
            any::<u8>(),
            proptest::option::of((0..channels as u8, any::<u16>())),
            any::<u64>(),
            proptest::collection::vec(any::<i16>(), channels),
        )
            .prop_map(|(counter, event, q, stamp_ns, samples)| RawFrame {
                counter,
                event,
                quality: q.map(|(channel, value)| QualitySlot { channel, value }),
                stamp_ns,
                samples,
            })
    }

    proptest! {
        #[test]
        fn encode_decode_identity(f in arb_frame(14)) {
            let h = header(14);
            let bytes = encode_frame(&h, &f).unwrap();
            prop_assert_eq!(bytes.len(), h.frame_size());
            prop_assert_eq!(decode_frame(&h, &bytes).unwrap(), f);
        }

        #[test]
        fn decode_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_frame(&header(14), &bytes);
        }
    }
}
