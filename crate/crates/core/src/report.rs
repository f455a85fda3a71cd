//! CSV and SVG reports with a fixed layout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::audit::{self, AuditRecord, InequalityId};
use crate::error::{Error, Result};
use crate::scenario::{write_trajectory_csv, TrajectoryRow};

/// Report output kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            _ => Err(Error::UnknownFormat(s.to_string())),
        }
    }
}

const WIDTH: f64 = 720.0;
const PANEL: f64 = 220.0;
const PAD_L: f64 = 70.0;
const PAD_R: f64 = 150.0;
const PAD_T: f64 = 30.0;
const PAD_B: f64 = 40.0;
const COLORS: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

type Series = (String, Vec<(f64, f64)>);

fn finite_range(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if lo > hi {
        return None;
    }
    if hi - lo < 1e-300 {
        let pad = lo.abs().max(1.0) * 0.5;
        return Some((lo - pad, hi + pad));
    }
    Some((lo, hi))
}

/// One panel of line plots; `top` is the panel's vertical offset.
fn panel(svg: &mut String, title: &str, y_label: &str, series: &[Series], top: f64) {
    let w = WIDTH - PAD_L - PAD_R;
    let h = PANEL - PAD_T - PAD_B;
    let x0 = PAD_L;
    let y0 = top + PAD_T;
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" font-family="sans-serif">{title}</text>"#,
        x0,
        top + 18.0
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{x0:.1}" y="{y0:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#000"/>"##
    );
    let xr = finite_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let yr = finite_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let (Some((xa, xb)), Some((ya, yb))) = (xr, yr) else {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" font-family="sans-serif">no data</text>"#,
            x0 + 0.5 * w - 20.0,
            y0 + 0.5 * h
        );
        return;
    };
    let sx = |x: f64| x0 + (x - xa) / (xb - xa).max(1e-300) * w;
    let sy = |y: f64| y0 + h - (y - ya) / (yb - ya) * h;
    for (v, anchor, x, y) in [
        (xa, "start", x0, y0 + h + 16.0),
        (xb, "end", x0 + w, y0 + h + 16.0),
    ] {
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{y:.1}" font-size="11" font-family="sans-serif" text-anchor="{anchor}">{v:.4}</text>"#
        );
    }
    for (v, y) in [(ya, y0 + h), (yb, y0 + 10.0)] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{y:.1}" font-size="11" font-family="sans-serif" text-anchor="end">{v:.3e}</text>"#,
            x0 - 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" font-family="sans-serif" text-anchor="middle">t</text>"#,
        x0 + 0.5 * w,
        y0 + h + 30.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" font-size="11" font-family="sans-serif" transform="rotate(-90 14 {:.1})" text-anchor="middle">{y_label}</text>"#,
        y0 + 0.5 * h,
        y0 + 0.5 * h
    );
    for (k, (label, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        let ly = y0 + 12.0 + 16.0 * k as f64;
        let lx = x0 + w + 10.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="11" font-family="sans-serif">{label}</text>"#,
            lx + 24.0
        );
    }
}

fn document(panels: &[(&str, &str, Vec<Series>)]) -> String {
    let height = PANEL * panels.len().max(1) as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {WIDTH:.0} {height:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n"
    );
    for (k, (title, label, series)) in panels.iter().enumerate() {
        panel(&mut svg, title, label, series, PANEL * k as f64);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Diameter, volume and `log₁₀ ‖R‖∞` against time.
pub fn trajectory_svg(rows: &[TrajectoryRow]) -> String {
    let pick = |f: fn(&TrajectoryRow) -> f64| -> Vec<(f64, f64)> {
        rows.iter().map(|r| (r.t, f(r))).collect()
    };
    document(&[
        (
            "Diameter",
            "diam",
            vec![("diameter".into(), pick(|r| r.diameter))],
        ),
        ("Volume", "V", vec![("volume".into(), pick(|r| r.volume))]),
        (
            "Curvature",
            "log10 sup|R|",
            vec![("sup_R".into(), pick(|r| r.sup_r.max(1e-300).log10()))],
        ),
    ])
}

/// Signed `log₁₀(1 + |margin|)` of every record against time, one line per inequality. Records
/// at several centers or radii show their smallest margin at each time.
pub fn margins_svg(records: &[AuditRecord]) -> String {
    let mut series = Vec::new();
    for id in InequalityId::ALL {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for r in records.iter().filter(|r| r.id == id && r.hypothesis_met()) {
            match pts.last_mut() {
                Some(last) if last.0 == r.t => last.1 = last.1.min(r.margin),
                _ => pts.push((r.t, r.margin)),
            }
        }
        if pts.is_empty() {
            continue;
        }
        let pts = pts
            .into_iter()
            .map(|(t, m)| (t, m.signum() * m.abs().ln_1p() / std::f64::consts::LN_10))
            .collect();
        series.push((id.as_str().to_string(), pts));
    }
    document(&[("Audit margins", "sgn log10(1+|margin|)", series)])
}

/// Writes the report files in every requested format and returns their paths in write order.
pub fn emit_report(
    rows: &[TrajectoryRow],
    records: &[AuditRecord],
    formats: &[&str],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let parsed: Vec<ReportFormat> = formats.iter().map(|f| f.parse()).collect::<Result<_>>()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let csv_path = dir.join("trajectory.csv");
    let f = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_trajectory_csv(rows, std::io::BufWriter::new(f))?;
    written.push(csv_path);
    audit::write_audit_csvs(records, dir)?;
    for id in InequalityId::ALL {
        written.push(dir.join(format!("audit_{}.csv", id.as_str())));
    }
    if parsed.contains(&ReportFormat::Svg) {
        for (name, body) in [
            ("trajectory.svg", trajectory_svg(rows)),
            ("margins.svg", margins_svg(records)),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
