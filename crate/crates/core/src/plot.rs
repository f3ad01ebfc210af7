//! Minimal SVG charts.

use std::fmt::Write;

use crate::explainers::Explanation;

const POSITIVE_FILL: &str = "#d9534f";
const NEGATIVE_FILL: &str = "#337ab7";
const SERIES_COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Horizontal bars of the top features' scores; positive and negative
/// scores get different fills.
pub fn explanation_bar_chart(e: &Explanation) -> String {
    let rows = e.top_features.len().max(1);
    let (width, label_w, bar_h, pad) = (640.0, 200.0, 28.0, 20.0);
    let height = pad * 2.0 + bar_h * rows as f64 + 20.0;
    let max = e.top_features.iter().fold(0.0f64, |m, f| m.max(f.score.abs())).max(1e-300);
    let half = (width - label_w - 2.0 * pad) / 2.0;
    let axis = label_w + pad + half;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{pad}" y="{}">class {} vs rest ({})</text>"#, pad, e.target_class, e.config.method);
    for (i, f) in e.top_features.iter().enumerate() {
        let y = pad + 10.0 + bar_h * i as f64;
        let len = f.score.abs() / max * half;
        let (x, fill) = if f.score >= 0.0 { (axis, POSITIVE_FILL) } else { (axis - len, NEGATIVE_FILL) };
        let _ = writeln!(s, r#"<text x="{pad}" y="{:.1}">{}</text>"#, y + bar_h * 0.6, escape(&f.name));
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.1}" width="{len:.2}" height="{:.1}" fill="{fill}"><title>{:.6}</title></rect>"#,
            y + 4.0,
            bar_h - 8.0,
            f.score
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{axis:.2}" y1="{:.1}" x2="{axis:.2}" y2="{:.1}" stroke="black"/>"#,
        pad + 10.0,
        height - pad
    );
    s.push_str("</svg>\n");
    s
}

/// One line series: label and (x, y) points; `None` y values are skipped.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, Option<f64>)>,
}

/// Line chart with y fixed to [0, 1].
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (width, height, left, right, top, bottom) = (640.0, 400.0, 60.0, 150.0, 40.0, 50.0);
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let px = |x: f64| left + (x - x_min) / span * plot_w;
    let py = |y: f64| top + (1.0 - y) * plot_h;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{left}" y="24">{}</text>"#, escape(title));
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#);
    for t in 0..=4 {
        let y = t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y:.2}</text>"#, left - 6.0, py(y) + 4.0);
    }
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#, px(x), top + plot_h + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, left + plot_w / 2.0, height - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = SERIES_COLORS[k % SERIES_COLORS.len()];
        let pts: Vec<String> =
            ser.points.iter().filter_map(|&(x, y)| y.map(|y| format!("{:.2},{:.2}", px(x), py(y)))).collect();
        if !pts.is_empty() {
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        }
        for &(x, y) in &ser.points {
            if let Some(y) = y {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
            }
        }
        let ly = top + 16.0 * k as f64 + 8.0;
        let lx = width - right + 12.0;
        let _ = writeln!(s, r#"<rect x="{lx}" y="{:.1}" width="12" height="4" fill="{color}"/>"#, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 18.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}
