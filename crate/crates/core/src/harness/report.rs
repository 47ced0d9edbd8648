//! CSV tables and SVG line charts. Output is a pure function of the input.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{LayerProfile, LayerValue};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn reports_to_csv(reports: &[EvalReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn reports_from_csv(text: &str) -> Result<Vec<EvalReport>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<EvalReport>, _>>()
        .map_err(csv_err)
}

#[derive(Serialize, Deserialize)]
struct ProfileRow {
    layer: usize,
    metric: String,
    scenario: String,
    value: Option<f64>,
}

pub fn profile_to_csv(p: &LayerProfile) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for v in &p.values {
        w.serialize(ProfileRow {
            layer: v.layer,
            metric: p.metric.clone(),
            scenario: p.scenario.clone(),
            value: v.value,
        })
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn profile_from_csv(text: &str) -> Result<LayerProfile> {
    let rows: Vec<ProfileRow> = csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)?;
    let first = rows.first().ok_or_else(|| Error::Format("empty profile csv".into()))?;
    let (metric, scenario) = (first.metric.clone(), first.scenario.clone());
    Ok(LayerProfile {
        metric,
        scenario,
        values: rows
            .into_iter()
            .map(|r| LayerValue {
                layer: r.layer,
                value: r.value,
            })
            .collect(),
    })
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

/// Line chart of one profile. Missing layers break the line.
pub fn profile_svg(p: &LayerProfile) -> String {
    let present: Vec<f64> = p.values.iter().filter_map(|v| v.value).collect();
    let (lo, hi) = present
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if present.is_empty() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    let first = p.values.first().map_or(1, |v| v.layer) as f64;
    let last = p.values.last().map_or(1, |v| v.layer) as f64;
    let span = (last - first).max(1.0);
    let x = |layer: usize| PAD + (layer as f64 - first) / span * (W - 2.0 * PAD);
    let y = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{} ({})</text>"#,
        W / 2.0,
        xml_escape(&p.metric),
        xml_escape(&p.scenario)
    );
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="black" points="{PAD},{} {PAD},{} {},{}"/>"#,
        PAD,
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{:.4}</text>"#,
        4.0,
        PAD + 4.0,
        hi
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{:.4}</text>"#,
        4.0,
        H - PAD,
        lo
    );
    for v in &p.values {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{}</text>"#,
            x(v.layer),
            H - PAD + 16.0,
            v.layer
        );
    }
    let mut segment: Vec<String> = Vec::new();
    let flush = |seg: &mut Vec<String>, svg: &mut String| {
        if !seg.is_empty() {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
                seg.join(" ")
            );
            seg.clear();
        }
    };
    for v in &p.values {
        match v.value {
            Some(val) => segment.push(format!("{:.2},{:.2}", x(v.layer), y(val))),
            None => flush(&mut segment, &mut svg),
        }
    }
    flush(&mut segment, &mut svg);
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn profile_stem(p: &LayerProfile) -> String {
    format!("{}_{}", p.metric, p.scenario)
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

/// Writes one CSV + SVG per profile and, when `reports` is non-empty, a
/// `reports.csv` table. Returns the written paths in order.
pub fn emit_report(profiles: &[LayerProfile], reports: &[EvalReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if profiles.is_empty() && reports.is_empty() {
        return Err(Error::InsufficientData("nothing to report".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for p in profiles {
        let stem = profile_stem(p);
        let csv_path = out_dir.join(format!("{stem}.csv"));
        write_file(&csv_path, profile_to_csv(p)?.as_bytes())?;
        let svg_path = out_dir.join(format!("{stem}.svg"));
        write_file(&svg_path, profile_svg(p).as_bytes())?;
        written.push(csv_path);
        written.push(svg_path);
    }
    if !reports.is_empty() {
        let path = out_dir.join("reports.csv");
        write_file(&path, reports_to_csv(reports)?.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
