use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use super::io::{format_time, write_ensembles};
use super::pipeline::{CoupledCase, PipelineRun};
use crate::coupling::Provenance;
use crate::postprocess::{MarginIndex, ParamsRecord};
use crate::verification::{HistogramKind, NamedHistogram, ScoreReport, Standardization};
use crate::Result;

/// One line of `params.jsonl`: a fitted margin tagged with the valid time
/// it was fitted for.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamsLine<'a> {
    pub valid_time: String,
    #[serde(flatten)]
    pub record: &'a ParamsRecord,
}

#[derive(Serialize)]
struct ProvenanceEntry<'a> {
    valid_time: String,
    margins: Vec<String>,
    #[serde(flatten)]
    provenance: &'a Provenance,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn labels(margins: &[MarginIndex]) -> Vec<String> {
    margins.iter().map(ToString::to_string).collect()
}

fn kind_name(kind: HistogramKind) -> &'static str {
    match kind {
        HistogramKind::Pit => "pit",
        HistogramKind::VerificationRank => "verification-rank",
        HistogramKind::MultivariateRank => "multivariate-rank",
    }
}

fn file_stem(h: &NamedHistogram) -> String {
    format!(
        "{}_{}_{}",
        h.system,
        h.target,
        kind_name(h.histogram.spec.kind)
    )
    .chars()
    .map(|c| {
        if c.is_ascii_alphanumeric() || c == '-' {
            c
        } else {
            '_'
        }
    })
    .collect()
}

/// Bar chart of histogram counts with the uniform expectation as a dashed
/// line.
pub fn histogram_svg(h: &NamedHistogram) -> String {
    const W: f64 = 480.0;
    const H: f64 = 260.0;
    const PAD: f64 = 36.0;
    let counts = &h.histogram.counts;
    let expected = h.histogram.total() as f64 / counts.len() as f64;
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let top = top.max(expected) * 1.1;
    let plot_w = W - 2.0 * PAD;
    let plot_h = H - 2.0 * PAD;
    let bar_w = plot_w / counts.len() as f64;
    let y_of = |v: f64| PAD + plot_h * (1.0 - v / top);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="22" font-family="sans-serif" font-size="13">{} {} {} (p = {:.3})</text>"#,
        h.system,
        h.target,
        kind_name(h.histogram.spec.kind),
        h.histogram.p_value
    );
    for (i, &c) in counts.iter().enumerate() {
        let x = PAD + i as f64 * bar_w;
        let y = y_of(c as f64);
        let _ = writeln!(
            s,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#4c72b0" stroke="white"/>"##,
            bar_w,
            PAD + plot_h - y
        );
    }
    let ye = y_of(expected);
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{ye:.2}" x2="{:.2}" y2="{ye:.2}" stroke="black" stroke-dasharray="4 3"/>"#,
        PAD + plot_w
    );
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        PAD + plot_h,
        PAD + plot_w,
        PAD + plot_h
    );
    s.push_str("</svg>\n");
    s
}

/// Write `scores.csv`, `histograms.csv`, `scores.json` and one SVG per
/// histogram under `plots/`. `extra` fields are merged into `scores.json`.
pub fn write_report(
    dir: &Path,
    report: &ScoreReport,
    standardizations: &BTreeMap<String, Standardization>,
    extra: serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    fs::create_dir_all(dir.join("plots"))?;
    let mut w = create(&dir.join("scores.csv"))?;
    report.write_records_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("histograms.csv"))?;
    report.write_histograms_csv(&mut w)?;
    w.flush()?;

    let histograms: Vec<_> = report
        .histograms
        .iter()
        .map(|h| {
            json!({
                "system": h.system,
                "target": h.target,
                "kind": kind_name(h.histogram.spec.kind),
                "counts": h.histogram.counts,
                "chi_square": h.histogram.chi_square,
                "p_value": h.histogram.p_value,
            })
        })
        .collect();
    let mut doc = serde_json::Map::new();
    doc.insert(
        "aggregates".into(),
        serde_json::to_value(report.aggregates())?,
    );
    doc.insert("histograms".into(), histograms.into());
    doc.insert(
        "standardization".into(),
        serde_json::to_value(standardizations)?,
    );
    doc.extend(extra);
    write_json(&dir.join("scores.json"), &doc)?;

    for h in &report.histograms {
        fs::write(
            dir.join("plots").join(format!("{}.svg", file_stem(h))),
            histogram_svg(h),
        )?;
    }
    Ok(())
}

/// Write `ecc_ensembles.csv` (forecast schema) and `provenance.json`.
pub fn write_coupled(dir: &Path, cases: &[CoupledCase]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let rows: Vec<_> = cases
        .iter()
        .map(|c| (c.valid_time, c.margins.clone(), c.ecc.values.clone()))
        .collect();
    let mut w = create(&dir.join("ecc_ensembles.csv"))?;
    write_ensembles(&mut w, &rows)?;
    w.flush()?;
    let prov: Vec<_> = cases
        .iter()
        .map(|c| ProvenanceEntry {
            valid_time: format_time(c.valid_time),
            margins: labels(&c.margins),
            provenance: &c.ecc.provenance,
        })
        .collect();
    write_json(&dir.join("provenance.json"), &prov)
}

/// Write every artifact of a pipeline run into `dir`.
pub fn write_pipeline_outputs(run: &PipelineRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let ecc: Vec<_> = run
        .cases
        .iter()
        .map(|c| (c.valid_time, c.margins.clone(), c.ecc.values.clone()))
        .collect();
    let mut w = create(&dir.join("ecc_ensembles.csv"))?;
    write_ensembles(&mut w, &ecc)?;
    w.flush()?;
    let independent: Vec<_> = run
        .cases
        .iter()
        .map(|c| (c.valid_time, c.margins.clone(), c.independent.clone()))
        .collect();
    let mut w = create(&dir.join("independent_ensembles.csv"))?;
    write_ensembles(&mut w, &independent)?;
    w.flush()?;

    let prov: Vec<_> = run
        .cases
        .iter()
        .map(|c| ProvenanceEntry {
            valid_time: format_time(c.valid_time),
            margins: labels(&c.margins),
            provenance: &c.ecc.provenance,
        })
        .collect();
    write_json(&dir.join("provenance.json"), &prov)?;

    let mut w = create(&dir.join("params.jsonl"))?;
    for c in &run.cases {
        for record in &c.params {
            let line = ParamsLine {
                valid_time: format_time(c.valid_time),
                record,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;

    let groups: BTreeMap<&str, Vec<String>> = run
        .groups
        .iter()
        .map(|(name, m)| (name.as_str(), labels(m)))
        .collect();
    let mut extra = serde_json::Map::new();
    extra.insert("scheme".into(), json!(run.config.scheme.name()));
    extra.insert("seed".into(), json!(run.config.seed));
    extra.insert("window_days".into(), json!(run.config.window_days));
    extra.insert("test_cases".into(), json!(run.cases.len()));
    extra.insert("groups".into(), serde_json::to_value(groups)?);
    extra.insert("failures".into(), serde_json::to_value(&run.failures)?);
    extra.insert(
        "missing_observations".into(),
        serde_json::to_value(&run.missing_observations)?,
    );
    write_report(dir, &run.report, &run.standardizations, extra)
}
