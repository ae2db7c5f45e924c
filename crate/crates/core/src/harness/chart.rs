//! Static SVG line charts.
//!
//! The plot-area `<rect>` carries `data-x-min`, `data-x-max`, `data-y-min`
//! and `data-y-max` attributes holding the padded axis ranges, so the
//! mapping from data to pixels can be checked by parsing the file.

use std::fmt::Write as _;
use std::path::Path;

use super::results::write_file;
use crate::error::{FedError, Result};

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 480.0;
/// Plot area in pixels: left, top, right, bottom.
pub const PLOT: (f64, f64, f64, f64) = (70.0, 40.0, 620.0, 420.0);
pub const PADDING: f64 = 0.05;
const TICKS: usize = 5;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
        }
    }
}

/// `[min, max]` widened by 5% of the span on both sides. A zero span is
/// widened by 5% of the magnitude instead (or by 0.05 around zero).
pub fn padded_range(min: f64, max: f64) -> (f64, f64) {
    let span = max - min;
    let pad = if span > 0.0 {
        span * PADDING
    } else if min != 0.0 {
        min.abs() * PADDING
    } else {
        PADDING
    };
    (min - pad, max + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn render_chart(series: &[Series], title: &str, x_label: &str, y_label: &str) -> Result<String> {
    if series.is_empty() {
        return Err(FedError::invalid("chart needs at least one series"));
    }
    if let Some(s) = series.iter().find(|s| s.points.is_empty()) {
        return Err(FedError::invalid(format!("series `{}` is empty", s.name)));
    }
    let all = series.iter().flat_map(|s| s.points.iter());
    if all.clone().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(FedError::invalid("chart values must be finite"));
    }
    let fold = |f: fn(&(f64, f64)) -> f64| {
        all.clone()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (x_min, x_max) = {
        let (lo, hi) = fold(|p| p.0);
        padded_range(lo, hi)
    };
    let (y_min, y_max) = {
        let (lo, hi) = fold(|p| p.1);
        padded_range(lo, hi)
    };
    let (left, top, right, bottom) = PLOT;
    let px = |x: f64| left + (x - x_min) / (x_max - x_min) * (right - left);
    let py = |y: f64| bottom - (y - y_min) / (y_max - y_min) * (bottom - top);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        num((left + right) / 2.0),
        escape(title)
    );
    let _ = writeln!(
        svg,
        r##"<rect id="plot-area" x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444" data-x-min="{x_min}" data-x-max="{x_max}" data-y-min="{y_min}" data-y-max="{y_max}"/>"##,
        num(left),
        num(top),
        num(right - left),
        num(bottom - top),
    );

    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let xv = x_min + f * (x_max - x_min);
        let yv = y_min + f * (y_max - y_min);
        let (x, y) = (px(xv), py(yv));
        let _ = writeln!(
            svg,
            r##"<line x1="{x}" y1="{b}" x2="{x}" y2="{b2}" stroke="#444"/><text x="{x}" y="{ty}" text-anchor="middle">{l}</text>"##,
            x = num(x),
            b = num(bottom),
            b2 = num(bottom + 5.0),
            ty = num(bottom + 18.0),
            l = tick_label(xv)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{l5}" y1="{y}" x2="{l}" y2="{y}" stroke="#444"/><line x1="{l}" y1="{y}" x2="{r}" y2="{y}" stroke="#ddd"/><text x="{lt}" y="{yt}" text-anchor="end">{t}</text>"##,
            l5 = num(left - 5.0),
            l = num(left),
            r = num(right),
            y = num(y),
            lt = num(left - 8.0),
            yt = num(y + 4.0),
            t = tick_label(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        num((left + right) / 2.0),
        num(bottom + 40.0),
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{y}" text-anchor="middle" transform="rotate(-90 18 {y})">{}</text>"#,
        escape(y_label),
        y = num((top + bottom) / 2.0)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{},{}", num(px(x)), num(py(y)))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-name="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(&s.name),
            pts.join(" ")
        );
        let ly = top + 10.0 + 20.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            num(right + 15.0),
            num(right + 40.0),
            num(right + 46.0),
            num(ly + 4.0),
            escape(&s.name),
            y = num(ly)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Render a line chart of `series` to `path`.
pub fn emit_chart(series: &[Series], path: &Path) -> Result<()> {
    let title = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    emit_chart_labelled(series, path, &title, "round", "value")
}

pub fn emit_chart_labelled(series: &[Series], path: &Path, title: &str, x_label: &str, y_label: &str) -> Result<()> {
    write_file(path, &render_chart(series, title, x_label, y_label)?)
}
