//! CSV and SVG emission for sweep results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepVariable {
    VelocityKmh,
    Horizon,
}

impl SweepVariable {
    pub fn tag(&self) -> &'static str {
        match self {
            SweepVariable::VelocityKmh => "velocity",
            SweepVariable::Horizon => "horizon",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "velocity" => Ok(SweepVariable::VelocityKmh),
            "horizon" => Ok(SweepVariable::Horizon),
            other => Err(Error::Parse(format!("unknown sweep variable: {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReportPoint {
    pub x: f64,
    pub nmse_mean: f64,
    pub nmse_std: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub sweep_variable: SweepVariable,
    pub points: Vec<ReportPoint>,
    /// Wall-clock time of the sweep; informational, not serialized to CSV.
    pub runtime_s: f64,
    pub n_seeds: usize,
}

fn render_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("method,x,nmse_mean,nmse_std,n_seeds\n");
    for r in reports {
        for p in &r.points {
            // `{}` round-trips f64 exactly through parse()
            writeln!(out, "{},{},{},{},{}", r.method, p.x, p.nmse_mean, p.nmse_std, p.n_seeds)
                .unwrap();
        }
    }
    out
}

/// Parses a CSV written by [`emit_report`] back into per-method reports.
/// `runtime_s` is not stored in the file and comes back as zero.
pub fn parse_report_csv(text: &str, variable: SweepVariable) -> Result<Vec<EvalReport>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty report CSV".into()))?;
    if header != "method,x,nmse_mean,nmse_std,n_seeds" {
        return Err(Error::Parse(format!("unexpected report header: {header}")));
    }
    let mut reports: Vec<EvalReport> = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::Parse(format!("report line {}: expected 5 columns", ln + 2)));
        }
        let bad = |what: &str| Error::Parse(format!("report line {}: bad {what}", ln + 2));
        let point = ReportPoint {
            x: cols[1].parse().map_err(|_| bad("x"))?,
            nmse_mean: cols[2].parse().map_err(|_| bad("nmse_mean"))?,
            nmse_std: cols[3].parse().map_err(|_| bad("nmse_std"))?,
            n_seeds: cols[4].parse().map_err(|_| bad("n_seeds"))?,
        };
        match reports.iter_mut().find(|r| r.method == cols[0]) {
            Some(r) => r.points.push(point),
            None => reports.push(EvalReport {
                method: cols[0].to_string(),
                sweep_variable: variable,
                points: vec![point],
                runtime_s: 0.0,
                n_seeds: point.n_seeds,
            }),
        }
    }
    Ok(reports)
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 420.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#555555"];

fn render_svg(reports: &[EvalReport], variable: SweepVariable) -> Result<String> {
    let all: Vec<&ReportPoint> = reports.iter().flat_map(|r| r.points.iter()).collect();
    if all.is_empty() {
        return Err(Error::Config("report: no points to plot".into()));
    }
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &all {
        let y = p.nmse_mean.max(1e-12).log10();
        x_min = x_min.min(p.x);
        x_max = x_max.max(p.x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    let px = |x: f64| MARGIN + (x - x_min) / (x_max - x_min) * (SVG_W - 2.0 * MARGIN);
    let py = |y: f64| SVG_H - MARGIN - (y - y_min) / (y_max - y_min) * (SVG_H - 2.0 * MARGIN);

    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">"
    )
    .unwrap();
    writeln!(s, "<rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>").unwrap();
    // axes
    writeln!(
        s,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        r = SVG_W - MARGIN,
        t = MARGIN,
        b = SVG_H - MARGIN
    )
    .unwrap();
    let x_label = match variable {
        SweepVariable::VelocityKmh => "velocity (km/h)",
        SweepVariable::Horizon => "prediction horizon (frames)",
    };
    writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{x_label}</text>",
        SVG_W / 2.0,
        SVG_H - 14.0
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 {})\">NMSE (log10)</text>",
        SVG_H / 2.0,
        SVG_H / 2.0
    )
    .unwrap();
    // y gridline labels at integer log10 values
    let (lo, hi) = (y_min.floor() as i64, y_max.ceil() as i64);
    for e in lo..=hi {
        let y = py(e as f64);
        if !(MARGIN..=SVG_H - MARGIN).contains(&y) {
            continue;
        }
        writeln!(
            s,
            "<line x1=\"{m}\" y1=\"{y}\" x2=\"{r}\" y2=\"{y}\" stroke=\"#ddd\"/>\
             <text x=\"{tx}\" y=\"{ty}\" text-anchor=\"end\" font-size=\"11\">1e{e}</text>",
            m = MARGIN,
            r = SVG_W - MARGIN,
            tx = MARGIN - 6.0,
            ty = y + 4.0
        )
        .unwrap();
    }
    for (i, r) in reports.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = r
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.x), py(p.nmse_mean.max(1e-12).log10())))
            .collect();
        writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"/>",
            pts.join(" ")
        )
        .unwrap();
        for p in &r.points {
            writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                px(p.x),
                py(p.nmse_mean.max(1e-12).log10())
            )
            .unwrap();
        }
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>",
            SVG_W - MARGIN + 6.0,
            MARGIN + 16.0 * i as f64,
            r.method
        )
        .unwrap();
    }
    writeln!(s, "</svg>").unwrap();
    Ok(s)
}

/// Writes `sweep_<variable>.csv` and `sweep_<variable>.svg` under `out_dir`.
/// Errors before touching the filesystem when `reports` is empty or mixes
/// sweep variables, so no partial files are left behind.
pub fn emit_report(reports: &[EvalReport], out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Config("emit_report: empty report list".into()))?;
    let variable = first.sweep_variable;
    if reports.iter().any(|r| r.sweep_variable != variable) {
        return Err(Error::Config("emit_report: mixed sweep variables".into()));
    }
    let csv = render_csv(reports);
    let svg = render_svg(reports, variable)?;
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("sweep_{}.csv", variable.tag()));
    let svg_path = out_dir.join(format!("sweep_{}.svg", variable.tag()));
    fs::write(&csv_path, csv)?;
    fs::write(&svg_path, svg)?;
    Ok((csv_path, svg_path))
}
