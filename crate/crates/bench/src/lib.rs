//! Shared fixtures for the benchmarks.

use nalgebra::DMatrix;
use sbs_core::inverse::{synthetic_head, HeadGeometry};
use sbs_core::wire::{EegPacket, StreamHeader};
use sbs_core::ForwardModel;

/// Synthetic head with `n_vertices` sources on the default montage.
pub fn head(n_vertices: usize) -> ForwardModel {
    synthetic_head(&HeadGeometry { n_vertices, ..HeadGeometry::default() })
}

/// Deterministic sensor data, channels × samples, in µV.
pub fn sensor_frame(channels: usize, samples: usize) -> DMatrix<f64> {
    DMatrix::from_fn(channels, samples, |i, j| {
        let t = j as f64 / 128.0;
        5.0 * (2.0 * std::f64::consts::PI * (9.0 + i as f64 * 0.3) * t).sin() + ((i * 31 + j * 17) % 13) as f64 - 6.0
    })
}

/// One second of packets with consecutive counters.
pub fn packets(header: &StreamHeader, n: usize) -> Vec<EegPacket> {
    let frame = sensor_frame(header.channel_count, n);
    (0..n)
        .map(|k| EegPacket {
            seq: k as u64,
            values_uv: frame.column(k).iter().copied().collect(),
            counter: (k % 129) as u8,
            quality: None,
            event: 0,
            recv_time_ns: (k as f64 * 1e9 / header.nominal_rate_hz) as u64,
        })
        .collect()
}
