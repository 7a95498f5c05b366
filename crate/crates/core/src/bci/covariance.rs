//! Covariance estimation with shrinkage toward a scaled identity.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shrinkage {
    None,
    /// Fixed intensity in [0, 1].
    Fixed { intensity: f64 },
    /// Analytic Ledoit-Wolf intensity.
    #[default]
    LedoitWolf,
}

/// Covariance of the columns of `x` (variables × observations), with the
/// per-variable mean removed, normalized by the observation count. Returns
/// the estimate and the shrinkage intensity used.
pub fn shrunk_covariance(x: &DMatrix<f64>, shrinkage: Shrinkage) -> (DMatrix<f64>, f64) {
    let (p, n) = x.shape();
    if n == 0 {
        return (DMatrix::zeros(p, p), 0.0);
    }
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        let m = row.mean();
        row.add_scalar_mut(-m);
    }
    let s = &xc * xc.transpose() / n as f64;
    let intensity = match shrinkage {
        Shrinkage::None => 0.0,
        Shrinkage::Fixed { intensity } => intensity.clamp(0.0, 1.0),
        Shrinkage::LedoitWolf => ledoit_wolf_intensity(&xc, &s),
    };
    (shrink(&s, intensity), intensity)
}

/// `(1 - δ) S + δ μ I` with `μ = tr(S)/p`.
pub fn shrink(s: &DMatrix<f64>, intensity: f64) -> DMatrix<f64> {
    let p = s.nrows();
    if p == 0 {
        return s.clone();
    }
    let mu = s.trace() / p as f64;
    let mut out = s * (1.0 - intensity);
    for i in 0..p {
        out[(i, i)] += intensity * mu;
    }
    out
}

/// Ledoit & Wolf (2004) optimal intensity for centred data `xc`.
fn ledoit_wolf_intensity(xc: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    let (p, n) = xc.shape();
    let mu = s.trace() / p as f64;
    let mut target = s.clone();
    for i in 0..p {
        target[(i, i)] -= mu;
    }
    let d2 = target.norm_squared();
    if d2 <= 0.0 {
        return 0.0;
    }
    let mut b2 = 0.0;
    for col in xc.column_iter() {
        let outer = col * col.transpose();
        b2 += (outer - s).norm_squared();
    }
    b2 /= (n * n) as f64;
    (b2.min(d2) / d2).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn no_shrinkage_is_sample_covariance() {
        let x = DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 1.0, -1.0, 2.0, 0.0, -2.0, 0.0]);
        let (c, d) = shrunk_covariance(&x, Shrinkage::None);
        assert_eq!(d, 0.0);
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
    }

    #[test]
    fn ledoit_wolf_shrinks_more_with_fewer_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut intensity = |n: usize| {
            // Unequal variances, so the identity target is biased.
            let x = DMatrix::from_fn(10, n, |r, _| (1.0 + r as f64) * { let z: f64 = StandardNormal.sample(&mut rng); z });
            shrunk_covariance(&x, Shrinkage::LedoitWolf).1
        };
        let few = intensity(12);
        let many = intensity(5000);
        assert!(few > many, "{few} vs {many}");
        assert!((0.0..=1.0).contains(&few));
    }

    #[test]
    fn rotation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(3, 20, |_, _| StandardNormal.sample(&mut rng));
        let q = DMatrix::from_fn(3, 3, |_, _| StandardNormal.sample(&mut rng)).qr().q();
        let (c, d) = shrunk_covariance(&x, Shrinkage::LedoitWolf);
        let (cr, dr) = shrunk_covariance(&(&q * &x), Shrinkage::LedoitWolf);
        assert!((d - dr).abs() < 1e-12);
        assert!((&q * c * q.transpose() - cr).norm() < 1e-12);
    }
}
