//! Minimal deterministic SVG plots for embeddings, curves and flow traces.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, SosmError};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { name: name.into(), points }
    }

    /// Values against their index.
    pub fn indexed(name: impl Into<String>, values: &[f64]) -> Self {
        Series::new(name, values.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// One point group per series.
    Scatter,
    /// One polyline per series.
    Line,
    /// Polyline with a marker at every sample.
    Trace,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

pub fn render_svg_string(series: &[Series], kind: PlotKind, title: &str) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        return Err(SosmError::Parameter("plot needs at least one series and no empty series".into()));
    }
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        if !(x.is_finite() && y.is_finite()) {
            return Err(SosmError::Parameter("plot points must be finite".into()));
        }
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (x0, x1) = span(x0, x1);
    let (y0, y1) = span(y0, y1);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, WIDTH / 2.0, escape(title));
    let (bx, by) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(out, r#"<line x1="{bx}" y1="{by}" x2="{}" y2="{by}" stroke="black"/>"#, WIDTH - MARGIN);
    let _ = writeln!(out, r#"<line x1="{bx}" y1="{by}" x2="{bx}" y2="{MARGIN}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<text x="{bx}" y="{}" font-size="11">{x0:.4}</text>"#, by + 16.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{x1:.4}</text>"#, WIDTH - MARGIN, by + 16.0);
    let _ = writeln!(out, r#"<text x="{}" y="{by}" font-size="11" text-anchor="end">{y0:.4}</text>"#, bx - 4.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{y1:.4}</text>"#, bx - 4.0, MARGIN + 4.0);

    for (n, s) in series.iter().enumerate() {
        let color = PALETTE[n % PALETTE.len()];
        let _ = writeln!(out, r#"<g id="series-{n}"><title>{}</title>"#, escape(&s.name));
        if kind != PlotKind::Scatter {
            let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        }
        if kind != PlotKind::Line {
            let r = if kind == PlotKind::Scatter { 2.5 } else { 1.8 };
            for &(x, y) in &s.points {
                let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{color}"/>"#, px(x), py(y));
            }
        }
        let ly = MARGIN + 14.0 * n as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" font-size="11" fill="{color}" text-anchor="end">{}</text></g>"#,
            WIDTH - MARGIN,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn render_svg(series: &[Series], kind: PlotKind, title: &str, path: &Path) -> Result<()> {
    let text = render_svg_string(series, kind, title)?;
    std::fs::write(path, text).map_err(|e| SosmError::io(path, e))
}
