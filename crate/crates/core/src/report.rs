//! Minimal SVG line charts: one colour per series, the mean drawn solid
//! and mean ± SD dashed.

use std::fmt::Write as _;

use crate::inverse::TrialAverage;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Chart labels.
#[derive(Debug, Clone, Default)]
pub struct ChartLabels {
    pub title: String,
    pub x: String,
    pub y: String,
}

/// Renders trial-averaged curves against `times`. Output depends only on
/// the inputs, so identical data gives identical bytes.
pub fn mean_sd_svg(labels: &ChartLabels, times: &[f64], series: &[(String, TrialAverage)]) -> String {
    let (x0, x1) = bounds(times.iter().copied());
    let ys = series.iter().flat_map(|(_, a)| {
        a.mean.iter().zip(&a.sd).flat_map(|(m, s)| [m - s, m + s])
    });
    let (mut y0, mut y1) = bounds(ys);
    if y0 > 0.0 && y0 < 0.25 * y1 {
        y0 = 0.0;
    }
    let pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (LEFT + W - RIGHT) / 2.0, esc(&labels.title));

    // Axes and ticks.
    let (ax0, ax1, ay0, ay1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(s, r#"<path d="M{ax0:.1},{ay1:.1} L{ax0:.1},{ay0:.1} L{ax1:.1},{ay0:.1}" fill="none" stroke="black"/>"#);
    for t in ticks(x0, x1) {
        let x = px(t);
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{ay0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, ay0 + 5.0, ay0 + 18.0, fmt_tick(t));
    }
    for t in ticks(y0, y1) {
        let y = py(t);
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{ax0:.1}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, ax0 - 5.0, ax0 - 8.0, y + 4.0, fmt_tick(t));
    }
    if x0 < 0.0 && x1 > 0.0 {
        let x = px(0.0);
        let _ = writeln!(s, r##"<line x1="{x:.1}" y1="{ay0:.1}" x2="{x:.1}" y2="{ay1:.1}" stroke="#888" stroke-width="0.8"/>"##);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (ax0 + ax1) / 2.0, H - 12.0, esc(&labels.x));
    let _ = writeln!(s, r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#, (ay0 + ay1) / 2.0, (ay0 + ay1) / 2.0, esc(&labels.y));

    for (i, (name, avg)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let line = |vals: &mut dyn Iterator<Item = f64>| -> String {
            let mut d = String::new();
            for (k, (t, v)) in times.iter().zip(vals).enumerate() {
                let _ = write!(d, "{}{:.2},{:.2}", if k == 0 { "M" } else { " L" }, px(*t), py(v));
            }
            d
        };
        let upper = line(&mut avg.mean.iter().zip(&avg.sd).map(|(m, s)| m + s));
        let lower = line(&mut avg.mean.iter().zip(&avg.sd).map(|(m, s)| m - s));
        let mean = line(&mut avg.mean.iter().copied());
        let _ = writeln!(s, r#"<path d="{upper}" fill="none" stroke="{colour}" stroke-width="1" stroke-dasharray="5,4"/>"#);
        let _ = writeln!(s, r#"<path d="{lower}" fill="none" stroke="{colour}" stroke-width="1" stroke-dasharray="5,4"/>"#);
        let _ = writeln!(s, r#"<path d="{mean}" fill="none" stroke="{colour}" stroke-width="2"/>"#);
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = W - RIGHT + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#, lx + 22.0, lx + 28.0, ly + 4.0, esc(name));
    }
    s.push_str("</svg>\n");
    s
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * hi.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// About five round tick positions inside `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
