//! Synthetic head model: a cortical cap of radially oriented dipoles inside
//! concentric conducting spheres (brain, skull, scalp), sensed by a
//! 14-electrode montage.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::forward::ForwardModel;
use crate::wire::DEFAULT_CHANNELS;

pub const ROI_PRECENTRAL_LEFT: &str = "PrecentralLeft";
pub const ROI_PRECENTRAL_RIGHT: &str = "PrecentralRight";

/// One conducting layer, bounded outside by `outer_radius_mm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub outer_radius_mm: f64,
    pub conductivity_s_per_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadGeometry {
    pub n_vertices: usize,
    /// Innermost first; the last shell's radius is the head radius.
    pub shells: Vec<Shell>,
    pub cortex_radius_mm: f64,
    /// Lowest vertex height as a fraction of the cortex radius.
    pub cap_floor: f64,
    pub neighbours: usize,
    pub roi_radius_deg: f64,
}

impl Default for HeadGeometry {
    fn default() -> Self {
        let shell = |r, s| Shell { outer_radius_mm: r, conductivity_s_per_m: s };
        Self {
            n_vertices: 1028,
            shells: vec![shell(80.0, 0.33), shell(85.0, 0.0042), shell(90.0, 0.33)],
            cortex_radius_mm: 72.0,
            cap_floor: -0.3,
            neighbours: 6,
            roi_radius_deg: 18.0,
        }
    }
}

impl HeadGeometry {
    pub fn head_radius_mm(&self) -> f64 {
        self.shells.last().map_or(0.0, |s| s.outer_radius_mm)
    }

    /// Checks shell ordering and that the cortex sits in the innermost
    /// one. Errors carry the offending field and the reason.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let err = |f: String, r: &str| Err((f, r.to_string()));
        if self.shells.is_empty() {
            return err("head.shells".into(), "must not be empty");
        }
        let mut inner = 0.0;
        for (i, s) in self.shells.iter().enumerate() {
            if !(s.outer_radius_mm > inner && s.outer_radius_mm.is_finite()) {
                return err(format!("head.shells[{i}].outer_radius_mm"), "must exceed the radius of the shell inside it");
            }
            if !(s.conductivity_s_per_m > 0.0 && s.conductivity_s_per_m.is_finite()) {
                return err(format!("head.shells[{i}].conductivity_s_per_m"), "must be > 0");
            }
            inner = s.outer_radius_mm;
        }
        if !(self.cortex_radius_mm > 0.0 && self.cortex_radius_mm < self.shells[0].outer_radius_mm) {
            return err("head.cortex_radius_mm".into(), "must lie inside the innermost shell");
        }
        Ok(())
    }
}

/// Electrode directions as (azimuth, elevation) in degrees. Azimuth runs
/// from the right ear (0°) through the nose (90°) to the left ear (180°).
pub fn electrode_direction(label: &str) -> Option<(f64, f64)> {
    Some(match label {
        "AF3" => (113.0, 26.0),
        "F7" => (144.0, 0.0),
        "F3" => (130.0, 41.0),
        "FC5" => (159.0, 21.0),
        "T7" => (180.0, 0.0),
        "P7" => (216.0, 0.0),
        "O1" => (252.0, 0.0),
        "O2" => (288.0, 0.0),
        "P8" => (324.0, 0.0),
        "T8" => (0.0, 0.0),
        "FC6" => (21.0, 21.0),
        "F4" => (50.0, 41.0),
        "F8" => (36.0, 0.0),
        "AF4" => (67.0, 26.0),
        "C3" => (180.0, 45.0),
        "C4" => (0.0, 45.0),
        "Cz" => (0.0, 90.0),
        _ => return None,
    })
}

fn unit(az_deg: f64, el_deg: f64) -> [f64; 3] {
    let (az, el) = (az_deg.to_radians(), el_deg.to_radians());
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Evenly spread points on the spherical cap `z >= floor` (Fibonacci
/// spiral), unit radius.
pub fn fibonacci_cap(n: usize, floor: f64) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (1.0 - floor) * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Symmetric k-nearest-neighbour graph.
pub fn knn_adjacency(points: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist2(&points[i], &points[j]), j)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in d.iter().take(k) {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

/// Surface potential per unit radial dipole moment in a homogeneous sphere,
/// in units of `1 / (4πσR²)`. `b` is the source depth ratio ρ/R and `x` the
/// cosine of the angle between source and electrode directions.
///
/// Closed form of Σₙ (2n+1) bⁿ⁻¹ Pₙ(x), from the Legendre generating
/// function.
pub fn radial_dipole_kernel(b: f64, x: f64) -> f64 {
    let d = (1.0 - 2.0 * b * x + b * b).sqrt();
    (2.0 * b * (x - b) / d.powi(3) + 1.0 / d - 1.0) / b
}

/// Legendre coefficients vₙ (n = 0, 1, ...) of the outer-surface potential
/// of a unit radial dipole at `source_radius_mm` inside `shells`, such that
/// V(x) = Σ vₙ Pₙ(x) in units of `1 / (4πσ₁R²)`, with σ₁ the innermost
/// conductivity and R the outer radius. Each order is solved by carrying
/// (V, σ ∂V/∂r) across the interfaces with 2×2 transfer matrices.
pub fn shell_coefficients(shells: &[Shell], source_radius_mm: f64) -> Vec<f64> {
    let r_out = shells.last().expect("at least one shell").outer_radius_mm;
    let b = source_radius_mm / r_out;
    let basis = |n: f64, sigma: f64, r: f64| {
        Matrix2::new(r.powf(n), r.powf(-n - 1.0), sigma * n * r.powf(n - 1.0), -sigma * (n + 1.0) * r.powf(-n - 2.0))
    };
    let mut coeffs = vec![0.0];
    for n in 1..1000 {
        let nf = n as f64;
        let source = nf * b.powi(n - 1);
        // Columns: response to a unit regular part, and to the source term.
        let mut t = Matrix2::identity();
        for k in 0..shells.len() - 1 {
            let r = shells[k].outer_radius_mm / r_out;
            let inside = basis(nf, shells[k].conductivity_s_per_m, r);
            let outside = basis(nf, shells[k + 1].conductivity_s_per_m, r);
            t = outside.try_inverse().expect("distinct shell radii") * inside * t;
        }
        // No current leaves the outer surface: n·A − (n+1)·B = 0 at r = 1.
        let flux = |c: Vector2<f64>| nf * c[0] - (nf + 1.0) * c[1];
        let (u, w) = (t.column(0).into_owned(), t.column(1).into_owned());
        let regular = -source * flux(w) / flux(u);
        let outer = u * regular + w * source;
        let v = outer[0] + outer[1];
        coeffs.push(v);
        if n > 8 && v.abs() < 1e-15 * coeffs[1].abs() {
            break;
        }
    }
    coeffs
}

/// Σ cₙ Pₙ(x) by the three-term recurrence.
fn legendre_sum(coeffs: &[f64], x: f64) -> f64 {
    let (mut p_prev, mut p) = (1.0, x);
    let mut sum = coeffs[0];
    for (n, c) in coeffs.iter().enumerate().skip(1) {
        sum += c * p;
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * x * p - nf * p_prev) / (nf + 1.0);
        p_prev = p;
        p = next;
    }
    sum
}

/// Builds the synthetic forward model.
pub fn synthetic_head(geom: &HeadGeometry) -> ForwardModel {
    let labels: Vec<String> = DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect();
    synthetic_head_with_channels(geom, &labels)
}

pub fn synthetic_head_with_channels(geom: &HeadGeometry, labels: &[String]) -> ForwardModel {
    let dirs = fibonacci_cap(geom.n_vertices, geom.cap_floor);
    let positions: Vec<[f64; 3]> =
        dirs.iter().map(|d| [d[0] * geom.cortex_radius_mm, d[1] * geom.cortex_radius_mm, d[2] * geom.cortex_radius_mm]).collect();
    let adjacency = knn_adjacency(&dirs, geom.neighbours);

    let electrodes: Vec<[f64; 3]> = labels
        .iter()
        .map(|l| {
            let (az, el) = electrode_direction(l).unwrap_or_else(|| panic!("no position for electrode {l}"));
            unit(az, el)
        })
        .collect();

    // µV per nAm: 1e-9 A·m dipole, distances in metres, volts -> µV.
    let r_m = geom.head_radius_mm() * 1e-3;
    let scale = 1e-9 / (4.0 * PI * geom.shells[0].conductivity_s_per_m * r_m * r_m) * 1e6;
    let coeffs = shell_coefficients(&geom.shells, geom.cortex_radius_mm);
    let gain = DMatrix::from_fn(labels.len(), dirs.len(), |c, v| scale * legendre_sum(&coeffs, dot(&electrodes[c], &dirs[v])));

    let cos_r = geom.roi_radius_deg.to_radians().cos();
    let roi = |az: f64, el: f64| -> Vec<usize> {
        let centre = unit(az, el);
        (0..dirs.len()).filter(|&v| dot(&dirs[v], &centre) >= cos_r).collect()
    };
    let mut roi_map = BTreeMap::new();
    // Just anterior of C3/C4.
    roi_map.insert(ROI_PRECENTRAL_LEFT.to_string(), roi(165.0, 45.0));
    roi_map.insert(ROI_PRECENTRAL_RIGHT.to_string(), roi(15.0, 45.0));

    ForwardModel { gain, vertex_positions: positions, adjacency, channel_labels: labels.to_vec(), roi_map }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Partial sums of the Legendre series, P_n by three-term recurrence.
    fn kernel_series(b: f64, x: f64, terms: usize) -> f64 {
        let (mut p_prev, mut p) = (1.0, x);
        let mut sum = 0.0;
        for n in 1..=terms {
            sum += (2 * n + 1) as f64 * b.powi(n as i32 - 1) * p;
            let next = ((2 * n + 1) as f64 * x * p - n as f64 * p_prev) / (n + 1) as f64;
            p_prev = p;
            p = next;
        }
        sum
    }

    #[test]
    fn closed_form_matches_legendre_series() {
        for b in [0.3, 0.6, 0.8, 0.9] {
            for x in [-1.0, -0.5, 0.0, 0.3, 0.7, 0.95, 1.0] {
                let series = kernel_series(b, x, 600);
                let closed = radial_dipole_kernel(b, x);
                assert!((series - closed).abs() < 1e-9 * closed.abs().max(1.0), "b={b} x={x}: {series} vs {closed}");
            }
        }
    }

    fn shell(r: f64, s: f64) -> Shell {
        Shell { outer_radius_mm: r, conductivity_s_per_m: s }
    }

    #[test]
    fn equal_conductivities_reduce_to_homogeneous_sphere() {
        for shells in [vec![shell(90.0, 0.33)], vec![shell(80.0, 0.33), shell(85.0, 0.33), shell(90.0, 0.33)]] {
            let c = shell_coefficients(&shells, 72.0);
            for x in [-1.0, -0.2, 0.4, 0.9, 1.0] {
                let (got, want) = (legendre_sum(&c, x), radial_dipole_kernel(0.8, x));
                assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "x={x}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn skull_attenuates_and_blurs() {
        let homog = shell_coefficients(&[shell(90.0, 0.33)], 72.0);
        let layered = shell_coefficients(&HeadGeometry::default().shells, 72.0);
        let (h0, l0) = (legendre_sum(&homog, 1.0), legendre_sum(&layered, 1.0));
        assert!(l0 < 0.5 * h0, "{l0} vs {h0}");
        // Relative falloff 30° off-axis is gentler behind a resistive skull.
        let x = 30f64.to_radians().cos();
        assert!(legendre_sum(&layered, x) / l0 > legendre_sum(&homog, x) / h0);
    }

    #[test]
    fn geometry_is_validated() {
        assert!(HeadGeometry::default().validate().is_ok());
        let mut g = HeadGeometry::default();
        g.shells[1].outer_radius_mm = 70.0;
        assert_eq!(g.validate().unwrap_err().0, "head.shells[1].outer_radius_mm");
        let g = HeadGeometry { cortex_radius_mm: 82.0, ..HeadGeometry::default() };
        assert_eq!(g.validate().unwrap_err().0, "head.cortex_radius_mm");
    }

    #[test]
    fn kernel_integrates_to_zero_over_sphere() {
        // No monopole term: the surface mean of a dipole potential vanishes.
        let n = 20_000;
        let integral: f64 = (0..n).map(|i| radial_dipole_kernel(0.8, -1.0 + (i as f64 + 0.5) * 2.0 / n as f64)).sum::<f64>() / n as f64;
        assert!(integral.abs() < 1e-3);
    }

    #[test]
    fn default_head_shape() {
        let m = synthetic_head(&HeadGeometry::default());
        m.validate().unwrap();
        assert_eq!(m.n_channels(), 14);
        assert_eq!(m.n_sources(), 1028);
        for name in [ROI_PRECENTRAL_LEFT, ROI_PRECENTRAL_RIGHT] {
            let roi = m.roi(name).unwrap();
            assert!(roi.len() >= 20 && roi.len() <= 80, "{name}: {}", roi.len());
        }
        assert!(m.is_connected());
        let left = m.roi(ROI_PRECENTRAL_LEFT).unwrap();
        assert!(left.iter().all(|&v| m.vertex_positions[v][0] < 0.0));
    }

    #[test]
    fn gain_peaks_under_the_electrode() {
        let m = synthetic_head(&HeadGeometry::default());
        let t7 = m.channel_labels.iter().position(|l| l == "T7").unwrap();
        let row = m.gain.row(t7);
        let best = (0..m.n_sources()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        let p = m.vertex_positions[best];
        assert!(p[0] < -60.0, "{p:?}");
        // Tenths of a microvolt per nAm behind the skull.
        assert!(row[best] > 0.1 && row[best] < 5.0, "{}", row[best]);
    }
}
