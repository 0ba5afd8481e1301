//! Minimal self-contained SVG emission: histograms and line charts. CSV is
//! the canonical output; these exist so runs are eyeballable without any
//! plotting stack.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 52.0;

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = write!(
        s,
        r#"<rect width="{W}" height="{H}" fill="white"/><text x="{}" y="24" font-family="monospace" font-size="14" text-anchor="middle">{title}</text>"#,
        W / 2.0
    );
    s
}

fn axis(s: &mut String, x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) {
    let _ = write!(
        s,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    );
    for (frac, val) in [(0.0, x_lo), (0.5, (x_lo + x_hi) / 2.0), (1.0, x_hi)] {
        let x = MARGIN + frac * (W - 2.0 * MARGIN);
        let _ = write!(
            s,
            r#"<text x="{x}" y="{}" font-family="monospace" font-size="11" text-anchor="middle">{val:.3}</text>"#,
            H - MARGIN + 16.0
        );
    }
    for (frac, val) in [(0.0, y_lo), (0.5, (y_lo + y_hi) / 2.0), (1.0, y_hi)] {
        let y = H - MARGIN - frac * (H - 2.0 * MARGIN);
        let _ = write!(
            s,
            r#"<text x="{}" y="{y}" font-family="monospace" font-size="11" text-anchor="end">{val:.3}</text>"#,
            MARGIN - 6.0
        );
    }
}

/// Histogram of `values` with `bins` equal-width bins.
pub fn histogram(values: &[f64], bins: usize, title: &str) -> String {
    let mut s = header(title);
    if values.is_empty() || bins == 0 {
        s.push_str("</svg>");
        return s;
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / span) * bins as f64) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let peak = *counts.iter().max().unwrap() as f64;
    axis(&mut s, lo, hi, 0.0, peak);
    let bw = (W - 2.0 * MARGIN) / bins as f64;
    for (i, &c) in counts.iter().enumerate() {
        let bh = (c as f64 / peak) * (H - 2.0 * MARGIN);
        let _ = write!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4477aa" stroke="white" stroke-width="0.5"/>"##,
            MARGIN + i as f64 * bw,
            H - MARGIN - bh,
            bw,
            bh
        );
    }
    s.push_str("</svg>");
    s
}

/// Line chart; each series is a (label, points) pair sorted by x.
pub fn line_chart(series: &[(&str, Vec<(f64, f64)>)], title: &str) -> String {
    let mut s = header(title);
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().cloned()).collect();
    if pts.is_empty() {
        s.push_str("</svg>");
        return s;
    }
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if (x_hi - x_lo).abs() < 1e-12 {
        x_hi = x_lo + 1.0;
    }
    if (y_hi - y_lo).abs() < 1e-12 {
        y_hi = y_lo + 1.0;
    }
    axis(&mut s, x_lo, x_hi, y_lo, y_hi);
    let colors = ["#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"];
    for (si, (label, points)) in series.iter().enumerate() {
        let color = colors[si % colors.len()];
        let path: Vec<String> = points
            .iter()
            .map(|&(x, y)| {
                let px = MARGIN + (x - x_lo) / (x_hi - x_lo) * (W - 2.0 * MARGIN);
                let py = H - MARGIN - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * MARGIN);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = write!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        );
        let _ = write!(
            s,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="11" fill="{color}">{label}</text>"#,
            W - MARGIN - 120.0,
            MARGIN + 14.0 * (si as f64 + 1.0)
        );
    }
    s.push_str("</svg>");
    s
}
