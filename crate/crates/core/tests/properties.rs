use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sbs_core::ingest::{detect_gaps, dropped_between};
use sbs_core::inverse::{knn_adjacency, synthetic_head, AdaptOptions, HeadGeometry, PriorKind, SpatialPrior};
use sbs_core::simulate::{generate_samples, SimScenario};
use sbs_core::{InverseState, SpectralSolver};

fn gaussian(seed: u64, r: usize, c: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(r, c, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    })
}

fn mesh(seed: u64, n: usize) -> Vec<Vec<usize>> {
    let p = gaussian(seed, n, 3);
    let pts: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let r = p.row(i).norm();
            [p[(i, 0)] / r, p[(i, 1)] / r, p[(i, 2)] / r]
        })
        .collect();
    knn_adjacency(&pts, 3)
}

fn instance(seed: u64, nc: usize, nd: usize, s: f64) -> (DMatrix<f64>, SpectralSolver) {
    let a = gaussian(seed, nc, nd);
    let prior = SpatialPrior::from_kind(PriorKind::Loreta { smoothness: s }, &mesh(seed + 1, nd)).unwrap();
    let solver = SpectralSolver::new(&a, &prior).unwrap();
    (a, solver)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_mean_is_linear(seed in 0u64..1000, nc in 2usize..8, nd in 5usize..40, c in -5.0f64..5.0,
                                s in 0.0f64..0.95, la in -2.0f64..2.0, lb in -2.0f64..2.0) {
        let (_, solver) = instance(seed, nc, nd, s);
        let st = InverseState::new(10f64.powf(la), 10f64.powf(lb)).unwrap();
        let (y1, y2) = (gaussian(seed + 2, nc, 3), gaussian(seed + 3, nc, 3));
        let m = |y: &DMatrix<f64>| solver.posterior(y, &st).unwrap().mean;
        let combined = m(&(&y1 * c + &y2));
        let separate = m(&y1) * c + m(&y2);
        prop_assert!((&combined - &separate).norm() <= 1e-9 * (1.0 + separate.norm()));
    }

    #[test]
    fn mean_depends_on_hyperparameters_only_through_their_ratio(seed in 0u64..1000, nc in 2usize..8, nd in 5usize..40,
                                                                k in -3.0f64..3.0) {
        let (_, solver) = instance(seed, nc, nd, 0.5);
        let y = gaussian(seed + 4, nc, 2);
        let base = solver.posterior(&y, &InverseState::new(0.3, 2.0).unwrap()).unwrap().mean;
        let f = 10f64.powf(k);
        let scaled = solver.posterior(&y, &InverseState::new(0.3 * f, 2.0 * f).unwrap()).unwrap().mean;
        prop_assert!((&base - &scaled).norm() <= 1e-9 * (1.0 + base.norm()));
    }

    #[test]
    fn em_never_decreases_evidence(seed in 0u64..1000, nc in 2usize..10, nd in 5usize..60, t in 1usize..64) {
        let (a, solver) = instance(seed, nc, nd, 0.8);
        let y = &a * gaussian(seed + 5, nd, t) * 0.3 + gaussian(seed + 6, nc, t);
        let mut st = solver.initial_state(&y).unwrap();
        let r = solver.adapt(&y, &mut st, &AdaptOptions { max_iters: 100, tol: 1e-12 }).unwrap();
        for w in r.log_evidence.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        prop_assert!(st.alpha.is_finite() && st.alpha > 0.0 && st.beta.is_finite() && st.beta > 0.0);
    }

    #[test]
    fn gaps_follow_counter_arithmetic(start in 0u8..129, steps in prop::collection::vec(1u64..129, 1..200)) {
        let mut counters = vec![start];
        let mut c = start as u64;
        for s in &steps {
            c = (c + s) % 129;
            counters.push(c as u8);
        }
        let gaps = detect_gaps(&counters);
        prop_assert_eq!(gaps, steps.iter().map(|s| s - 1).collect::<Vec<_>>());
        prop_assert_eq!(dropped_between(start, start), 128);
    }
}

#[test]
fn pure_noise_is_regularized_harder_than_strong_signal() {
    let model = synthetic_head(&HeadGeometry { n_vertices: 300, ..HeadGeometry::default() });
    let prior = SpatialPrior::from_kind(PriorKind::default(), &model.adjacency).unwrap();
    let solver = SpectralSolver::new(&model.gain, &prior).unwrap();
    let fit = |amplitude: f64, noise: f64| {
        let mut s = SimScenario::preset("ideal", &model, 5, 0).unwrap();
        s.sources[0].amplitude_nam = amplitude;
        s.noise_std_uv = noise;
        let mut bytes = Vec::new();
        generate_samples(&s, &model, 128, &[], &mut bytes).unwrap();
        let packets: Vec<_> = sbs_core::ingest::PacketReader::new(
            std::io::Cursor::new(&bytes),
            sbs_core::ingest::Clocking::Recorded { speed: 0.0 },
        )
        .unwrap()
        .packets()
        .map(|p| p.unwrap())
        .collect();
        let y = DMatrix::from_fn(model.gain.nrows(), packets.len(), |c, k| packets[k].values_uv[c]);
        let mut st = solver.initial_state(&y).unwrap();
        solver.adapt(&y, &mut st, &AdaptOptions { max_iters: 20_000, tol: 1e-7 }).unwrap();
        st.lambda()
    };
    let noise_only = fit(0.0, 2.0);
    let strong = fit(20.0, 2.0);
    assert!(noise_only > 10.0 * strong, "λ noise {noise_only:.3e} vs signal {strong:.3e}");
}
