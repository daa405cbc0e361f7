//! MetricsReport files and the embeddings table.

use std::fs;
use std::path::Path;

use dannseg_core::data::{Split, CLASS_NAMES};
use dannseg_core::metrics::{Aggregate, Comparison, MetricsReport, ProbeResult, SampleMetrics};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::write_json;
use crate::error::{CliError, Result};

fn foreground() -> &'static [&'static str] {
    &CLASS_NAMES[1..]
}

pub fn metrics_columns() -> Vec<String> {
    let mut cols = vec!["id".to_string(), "domain".to_string()];
    cols.extend(foreground().iter().map(|c| format!("dice_{c}")));
    cols.extend(foreground().iter().map(|c| format!("hd_{c}_mm")));
    cols
}

fn csv_fail(e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("writing CSV: {e}"))
}

/// Per-sample rows; an undefined Hausdorff distance is an empty field.
pub fn metrics_csv(rows: &[SampleMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(metrics_columns()).map_err(csv_fail)?;
    for r in rows {
        let mut rec = vec![r.id.clone(), r.domain.clone()];
        rec.extend(r.dice.iter().map(f64::to_string));
        rec.extend(
            r.hausdorff_mm
                .iter()
                .map(|h| h.map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&rec).map_err(csv_fail)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(csv_fail)?).expect("UTF-8 fields"))
}

/// Parse rows written by [`metrics_csv`].
pub fn parse_metrics_csv(text: &str) -> Result<Vec<SampleMetrics>> {
    let bad = |m: String| CliError::Data(format!("malformed metrics CSV: {m}"));
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| bad(e.to_string()))?;
    if headers
        .iter()
        .ne(metrics_columns().iter().map(String::as_str))
    {
        return Err(bad(format!("columns {headers:?}")));
    }
    let k = foreground().len();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let parse = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("value {s:?}")));
        let dice = (0..k).map(|c| parse(&rec[2 + c])).collect::<Result<_>>()?;
        let hausdorff_mm = (0..k)
            .map(|c| match &rec[2 + k + c] {
                "" => Ok(None),
                s => parse(s).map(Some),
            })
            .collect::<Result<_>>()?;
        rows.push(SampleMetrics {
            id: rec[0].to_string(),
            domain: rec[1].to_string(),
            dice,
            hausdorff_mm,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub config: RunConfig,
    pub checkpoint: String,
    pub split: Split,
    pub aggregates: Vec<Aggregate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeResult>,
    /// Path of the second checkpoint of a comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compared_with: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<Comparison>,
}

/// Write `metrics.csv` and `metrics.json` into `dir`.
pub fn write_metrics(dir: &Path, report: &MetricsReport, doc: &MetricsDocument) -> Result<()> {
    let path = dir.join("metrics.csv");
    fs::write(&path, metrics_csv(&report.rows)?).map_err(CliError::io(&path))?;
    write_json(&dir.join("metrics.json"), doc)
}

pub struct EmbeddingRow<'a> {
    pub id: &'a str,
    pub domain: &'a str,
    pub values: &'a [f64],
}

/// Columns `id, domain, v_0 … v_{n-1}`.
pub fn embeddings_csv(rows: &[EmbeddingRow<'_>]) -> Result<String> {
    let dim = rows.first().map_or(0, |r| r.values.len());
    if rows.iter().any(|r| r.values.len() != dim) {
        return Err(CliError::Data("embeddings differ in length".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = ["id".to_string(), "domain".to_string()]
        .into_iter()
        .chain((0..dim).map(|i| format!("v_{i}")))
        .collect();
    w.write_record(&header).map_err(csv_fail)?;
    for r in rows {
        let rec: Vec<String> = [r.id.to_string(), r.domain.to_string()]
            .into_iter()
            .chain(r.values.iter().map(f64::to_string))
            .collect();
        w.write_record(&rec).map_err(csv_fail)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(csv_fail)?).expect("UTF-8 fields"))
}
