//! Self-contained SVG charts: per-orderer median line over a min-max band,
//! log-scale y axis, epoch on x.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::config::Mode;
use crate::error::{write_file, CliError, CliResult};
use crate::summary::{Band, Summary};

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// The part of a summary JSON a chart needs. Other fields are ignored, so
/// charts can be drawn from summaries holding non-finite report values.
#[derive(Debug, Deserialize)]
pub struct PlotData {
    pub mode: Mode,
    pub n: usize,
    pub gamma: f64,
    pub orderers: Vec<PlotSeries>,
}

#[derive(Debug, Deserialize)]
pub struct PlotSeries {
    pub orderer: String,
    pub epochs: BTreeMap<String, Band>,
}

impl From<&Summary> for PlotData {
    fn from(s: &Summary) -> Self {
        Self {
            mode: s.mode,
            n: s.n,
            gamma: s.gamma,
            orderers: s
                .orderers
                .iter()
                .map(|o| PlotSeries { orderer: o.orderer.clone(), epochs: o.epochs.clone() })
                .collect(),
        }
    }
}

/// Column names found in any orderer.
pub fn available_columns(data: &PlotData) -> Vec<String> {
    let mut cols: Vec<String> = data.orderers.iter().flat_map(|o| o.epochs.keys().cloned()).collect();
    cols.sort();
    cols.dedup();
    cols
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Scale {
    epochs: usize,
    lo: f64,
    hi: f64,
}

impl Scale {
    fn x(&self, q: usize) -> f64 {
        let span = (self.epochs.max(2) - 1) as f64;
        LEFT + (WIDTH - LEFT - RIGHT) * q as f64 / span
    }

    fn y(&self, v: f64) -> f64 {
        let v = if v > 0.0 && v.is_finite() { v } else { 10f64.powf(self.lo) };
        let t = ((v.log10() - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0);
        HEIGHT - BOTTOM - (HEIGHT - TOP - BOTTOM) * t
    }
}

fn scale_for(bands: &[(&str, &Band)]) -> Scale {
    let positive = bands
        .iter()
        .flat_map(|(_, b)| b.min.iter().chain(&b.max))
        .copied()
        .filter(|v| *v > 0.0 && v.is_finite());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in positive {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        (lo, hi) = (1.0, 10.0);
    }
    let (mut lo, mut hi) = (lo.log10().floor(), hi.log10().ceil());
    if hi <= lo {
        lo -= 1.0;
        hi += 1.0;
    }
    let epochs = bands.iter().map(|(_, b)| b.median.len()).max().unwrap_or(1);
    Scale { epochs, lo, hi }
}

fn points(scale: &Scale, values: impl Iterator<Item = (usize, f64)>) -> String {
    let mut s = String::new();
    for (q, v) in values {
        let _ = write!(s, "{:.2},{:.2} ", scale.x(q), scale.y(v));
    }
    s.trim_end().to_string()
}

/// Renders one metric of a summary as SVG.
pub fn render(summary: &Summary, metric: &str) -> CliResult<String> {
    render_data(&PlotData::from(summary), metric)
}

pub fn render_data(summary: &PlotData, metric: &str) -> CliResult<String> {
    let bands: Vec<(&str, &Band)> = summary
        .orderers
        .iter()
        .filter_map(|o| o.epochs.get(metric).map(|b| (o.orderer.as_str(), b)))
        .collect();
    if bands.is_empty() {
        return Err(CliError::Config(format!(
            "summary has no column '{metric}'; available: {}",
            available_columns(summary).join(", ")
        )));
    }
    let sc = scale_for(&bands);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let mode = if summary.mode == Mode::Fl { "FL" } else { "SGD" };
    let title = format!("{metric} ({mode}, N = {}, γ = {:.3e})", summary.n, summary.gamma);
    let _ = writeln!(svg, r#"<text x="{LEFT}" y="24" font-size="14">{}</text>"#, escape(&title));

    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(svg, r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);
    for e in (sc.lo as i32)..=(sc.hi as i32) {
        let y = sc.y(10f64.powi(e));
        let _ = writeln!(svg, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#dddddd"/>"##);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"#, x0 - 6.0, y + 4.0);
    }
    let last = sc.epochs.saturating_sub(1);
    let step = (last / 5).max(1);
    for q in (0..=last).step_by(step) {
        let x = sc.x(q);
        let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y1 + 5.0);
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{q}</text>"#, y1 + 20.0);
    }
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#, (x0 + x1) / 2.0, HEIGHT - 12.0);

    for (i, (name, b)) in bands.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper = points(&sc, b.max.iter().copied().enumerate());
        let lower = points(&sc, b.min.iter().copied().enumerate().rev());
        let _ = writeln!(svg, r#"<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#);
        let median = points(&sc, b.median.iter().copied().enumerate());
        let _ = writeln!(svg, r#"<polyline points="{median}" fill="none" stroke="{color}" stroke-width="1.8"/>"#);
        let ly = TOP + 16.0 + 20.0 * i as f64;
        let lx = x1 + 16.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, lx + 22.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 28.0, ly + 4.0, escape(name));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Reads a summary JSON and writes one metric's chart.
pub fn emit_plot(summary_path: &Path, metric: &str, out: &Path) -> CliResult<()> {
    let text = std::fs::read_to_string(summary_path)
        .map_err(|e| CliError::Config(format!("cannot read summary {}: {e}", summary_path.display())))?;
    let data: PlotData = serde_json::from_str(&text)?;
    write_file(out, render_data(&data, metric)?)
}
