//! Minimal standalone SVG line plots.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::util::linear_fit;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    /// Overlay a least-squares line through the first series, in plot coordinates.
    pub fit: bool,
    /// Optional footer; omitted by default so reruns are byte-identical.
    pub timestamp: Option<String>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn transform(v: f64, log: bool) -> Option<f64> {
    if log {
        (v > 0.0 && v.is_finite()).then(|| v.log10())
    } else {
        v.is_finite().then_some(v)
    }
}

/// Slope of the least-squares line through `points` in the plot's coordinates.
pub fn fitted_slope(points: &[(f64, f64)], log_x: bool, log_y: bool) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter_map(|&(a, b)| Some((transform(a, log_x)?, transform(b, log_y)?)))
        .unzip();
    linear_fit(&x, &y).map(|f| f.slope)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `series` as an SVG document.
pub fn emit_plot(series: &[Series], spec: &PlotSpec) -> Result<String> {
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter_map(|&(x, y)| Some((transform(x, spec.log_x)?, transform(y, spec.log_y)?)))
                .collect()
        })
        .collect();
    let all: Vec<(f64, f64)> = pts.iter().flatten().copied().collect();
    if all.is_empty() {
        return Err(Error::InsufficientData("plot has no plottable points".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 <= 1e-12 * x0.abs().max(1.0) {
        return Err(Error::InvalidParameter("degenerate x range".into()));
    }
    if y1 - y0 <= 1e-12 * y0.abs().max(1.0) {
        let pad = 0.5 * y0.abs().max(1.0);
        y0 -= pad;
        y1 += pad;
    }
    let (px, py) = (0.05 * (x1 - x0), 0.05 * (y1 - y0));
    let (x0, x1, y0, y1) = (x0 - px, x1 + px, y0 - py, y1 + py);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let sy = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(&spec.title)
    );
    let (bx0, bx1, by0, by1) = (sx(x0), sx(x1), sy(y0), sy(y1));
    let _ = writeln!(
        s,
        r#"<rect x="{bx0:.2}" y="{by1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        bx1 - bx0,
        by0 - by1
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let xl = if spec.log_x {
            format!("1e{xv:.2}")
        } else {
            format!("{xv:.3}")
        };
        let yl = if spec.log_y {
            format!("1e{yv:.2}")
        } else {
            format!("{yv:.3}")
        };
        let _ = writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{by0:.2}" x2="{0:.2}" y2="{1:.2}" stroke="black"/><text x="{0:.2}" y="{2:.2}" text-anchor="middle">{xl}</text>"#,
            sx(xv),
            by0 + 5.0,
            by0 + 18.0
        );
        let _ = writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{bx0:.2}" y2="{1:.2}" stroke="black"/><text x="{2:.2}" y="{3:.2}" text-anchor="end">{yl}</text>"#,
            bx0 - 5.0,
            sy(yv),
            bx0 - 8.0,
            sy(yv) + 4.0
        );
    }
    let xlab = if spec.log_x {
        format!("{} (log)", spec.x_label)
    } else {
        spec.x_label.clone()
    };
    let ylab = if spec.log_y {
        format!("{} (log)", spec.y_label)
    } else {
        spec.y_label.clone()
    };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (bx0 + bx1) / 2.0,
        H - 12.0,
        escape(&xlab)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (by0 + by1) / 2.0,
        escape(&ylab)
    );
    for (i, (ser, p)) in series.iter().zip(&pts).enumerate() {
        let color = COLORS[i % COLORS.len()];
        if p.len() > 1 {
            let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        }
        for &(x, y) in p {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = TOP + 18.0 * i as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{ly:.2}" x2="{1:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{2:.2}" y="{3:.2}">{4}</text>"#,
            W - RIGHT + 12.0,
            W - RIGHT + 32.0,
            W - RIGHT + 38.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    if spec.fit {
        let first = &pts[0];
        let (x, y): (Vec<f64>, Vec<f64>) = first.iter().copied().unzip();
        let fit = linear_fit(&x, &y).ok_or_else(|| Error::InsufficientData("fit needs two distinct points".into()))?;
        let (fa, fb) = (x0 + px, x1 - px);
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#555" stroke-dasharray="6 4"/>"##,
            sx(fa),
            sy(fit.intercept + fit.slope * fa),
            sx(fb),
            sy(fit.intercept + fit.slope * fb)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">slope = {:.3}</text>"#,
            bx0 + 10.0,
            by1 + 18.0,
            fit.slope
        );
    }
    if let Some(ts) = &spec.timestamp {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="9">{}</text>"#,
            W - 8.0,
            H - 4.0,
            escape(ts)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
