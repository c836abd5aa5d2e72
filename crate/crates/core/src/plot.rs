//! Static SVG line charts with a CSV twin.
//!
//! Each series' raw data points are embedded verbatim in the SVG
//! (`<polyline data-points="x,y x,y ...">`) using the same number
//! formatting as the CSV, so both files carry identical values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::trainer::read_metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Entropy,
    Reward,
    CovCumulative,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(PlotKind::Entropy),
            "reward" => Ok(PlotKind::Reward),
            "cov_cumulative" => Ok(PlotKind::CovCumulative),
            _ => Err(Error::Config(format!("unknown plot kind `{s}` (entropy, reward, cov_cumulative)"))),
        }
    }
}

impl PlotKind {
    fn name(self) -> &'static str {
        match self {
            PlotKind::Entropy => "entropy",
            PlotKind::Reward => "reward",
            PlotKind::CovCumulative => "cov_cumulative",
        }
    }

    fn axes(self) -> (&'static str, &'static str) {
        match self {
            PlotKind::Entropy => ("step", "policy entropy (nats)"),
            PlotKind::Reward => ("step", "mean reward"),
            PlotKind::CovCumulative => ("fraction of tokens", "fraction of covariance mass"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Read a cumulative-contribution CSV written by `diagnose`.
pub fn read_curve_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let err = |line: usize, msg: String| Error::Log {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut next = || -> Result<f64> {
            parts
                .next()
                .and_then(|p| p.trim().parse().ok())
                .ok_or_else(|| err(i + 1, format!("expected `x,y`, got `{line}`")))
        };
        out.push((next()?, next()?));
    }
    if out.is_empty() {
        return Err(err(0, "curve file has no data rows".into()));
    }
    Ok(out)
}

pub fn load_series(path: &Path, kind: PlotKind) -> Result<Series> {
    let label = path
        .parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let points = match kind {
        PlotKind::Entropy => read_metrics(path)?
            .iter()
            .map(|r| (r.step as f64, r.entropy_mc))
            .collect(),
        PlotKind::Reward => read_metrics(path)?
            .iter()
            .map(|r| (r.step as f64, r.mean_reward))
            .collect(),
        PlotKind::CovCumulative => read_curve_csv(path)?,
    };
    Ok(Series { label, points })
}

pub fn to_csv(series: &[Series]) -> String {
    let mut out = String::from("series,x,y\n");
    for s in series {
        for (x, y) in &s.points {
            let _ = writeln!(out, "{},{x},{y}", s.label);
        }
    }
    out
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub fn to_svg(series: &[Series], kind: PlotKind) -> String {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if kind == PlotKind::CovCumulative {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let (xlabel, ylabel) = kind.axes();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, w / 2.0, h - 20.0);
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{ylabel}</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (tx, ty, anchor, v) in [
        (m, h - m + 16.0, "middle", x0),
        (w - m, h - m + 16.0, "middle", x1),
        (m - 6.0, h - m, "end", y0),
        (m - 6.0, m + 4.0, "end", y1),
    ] {
        let _ = writeln!(svg, r#"<text x="{tx}" y="{ty}" text-anchor="{anchor}">{v:.3}</text>"#);
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let data: Vec<String> = s.points.iter().map(|(x, y)| format!("{x},{y}")).collect();
        let pix: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-series="{}" data-points="{}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            s.label,
            data.join(" "),
            pix.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            w - m - 120.0,
            m + 16.0 * (i as f64 + 1.0),
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write `<kind>.svg` and `<kind>.csv` into `out_dir`.
pub fn cmd_plot(logs: &[PathBuf], kind: PlotKind, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if logs.is_empty() {
        return Err(Error::Config("plot needs at least one input".into()));
    }
    let mut series = logs.iter().map(|p| load_series(p, kind)).collect::<Result<Vec<_>>>()?;
    // disambiguate identical labels
    if series.len() > 1 && series.windows(2).any(|w| w[0].label == w[1].label) {
        for (i, s) in series.iter_mut().enumerate() {
            s.label = format!("{}#{}", s.label, i + 1);
        }
    }
    fs::create_dir_all(out_dir)?;
    let svg_path = out_dir.join(format!("{}.svg", kind.name()));
    let csv_path = out_dir.join(format!("{}.csv", kind.name()));
    fs::write(&svg_path, to_svg(&series, kind))?;
    fs::write(&csv_path, to_csv(&series))?;
    Ok((svg_path, csv_path))
}

/// Parse the `data-points` of every series back out of an SVG.
pub fn svg_data_points(svg: &str) -> Vec<(String, Vec<(f64, f64)>)> {
    svg.lines()
        .filter(|l| l.starts_with("<polyline"))
        .filter_map(|l| {
            let attr = |name: &str| {
                let start = l.find(&format!("{name}=\""))? + name.len() + 2;
                let end = start + l[start..].find('"')?;
                Some(l[start..end].to_string())
            };
            let pts = attr("data-points")?
                .split_whitespace()
                .filter_map(|p| {
                    let (x, y) = p.split_once(',')?;
                    Some((x.parse().ok()?, y.parse().ok()?))
                })
                .collect();
            Some((attr("data-series")?, pts))
        })
        .collect()
}
