use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use sbs_bench::{head, packets, sensor_frame};
use sbs_core::dsp::{BandpassSpec, MultiChannelFilter};
use sbs_core::inverse::{AdaptOptions, PriorKind, SpatialPrior};
use sbs_core::wire::{decode_frame, encode_frame, StreamHeader};
use sbs_core::{PipelineConfig, ReconstructionPipeline, SpectralSolver};

fn inverse(c: &mut Criterion) {
    let model = head(1028);
    let prior = SpatialPrior::from_kind(PriorKind::default(), &model.adjacency).unwrap();
    let solver = SpectralSolver::new(&model.gain, &prior).unwrap();
    let frame = sensor_frame(model.n_channels(), 128);
    let mut state = solver.initial_state(&frame).unwrap();
    solver.adapt(&frame, &mut state, &AdaptOptions { max_iters: 20_000, tol: 1e-7 }).unwrap();

    let mut g = c.benchmark_group("inverse_1028x14_128");
    g.bench_function("posterior", |b| b.iter(|| solver.posterior(black_box(&frame), &state).unwrap()));
    g.bench_function("adapt_10", |b| {
        b.iter_batched(
            || state.clone(),
            |mut s| solver.adapt(black_box(&frame), &mut s, &AdaptOptions::default()).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.bench_function("posterior_and_adapt", |b| {
        b.iter_batched(
            || state.clone(),
            |mut s| {
                solver.adapt(&frame, &mut s, &AdaptOptions::default()).unwrap();
                solver.posterior(black_box(&frame), &s).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
    g.sample_size(10);
    g.bench_function("factorize", |b| b.iter(|| SpectralSolver::new(black_box(&model.gain), &prior).unwrap()));
    g.finish();
}

fn wire(c: &mut Criterion) {
    let header = StreamHeader::default();
    let p = &packets(&header, 1)[0];
    let bytes = encode_frame(&header, &p.to_frame(&header)).unwrap();
    c.bench_function("wire/encode_frame", |b| b.iter(|| encode_frame(&header, black_box(&p.to_frame(&header))).unwrap()));
    c.bench_function("wire/decode_frame", |b| b.iter(|| decode_frame(&header, black_box(&bytes)).unwrap()));
}

fn dsp(c: &mut Criterion) {
    let frame = sensor_frame(14, 128);
    let columns: Vec<Vec<f64>> = frame.column_iter().map(|c| c.iter().copied().collect()).collect();
    c.bench_function("dsp/bandpass_14ch_1s", |b| {
        b.iter_batched(
            || MultiChannelFilter::new(&BandpassSpec::alpha(), 128.0, 14).unwrap(),
            |mut f| {
                for col in &columns {
                    let mut x = col.clone();
                    f.process(&mut x);
                    black_box(&x);
                }
            },
            BatchSize::SmallInput,
        )
    });
}

fn pipeline(c: &mut Criterion) {
    let header = StreamHeader::default();
    let config = PipelineConfig::default();
    let model = config.forward_model(&header).unwrap();
    let solver = Arc::new(config.solver(&model).unwrap());
    let warm = packets(&header, 256);
    let second = packets(&header, 128);
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(20);
    // One second of stream after the initial adaptation window.
    g.bench_function("one_second_1028", |b| {
        b.iter_batched(
            || {
                let mut p = ReconstructionPipeline::with_solver(&config, solver.clone(), &model, &header).unwrap();
                for pk in &warm {
                    p.push(pk).unwrap();
                }
                p
            },
            |mut p| {
                for pk in &second {
                    black_box(p.push(pk).unwrap());
                }
            },
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

criterion_group!(benches, inverse, wire, dsp, pipeline);
criterion_main!(benches);
