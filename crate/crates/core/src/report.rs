//! Report rows per pipeline and their CSV / JSON encodings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::CohortReport;

pub const CSV_COLUMNS: [&str; 10] = [
    "method",
    "band",
    "class",
    "ap",
    "ate",
    "ase",
    "aoe",
    "cds",
    "latency_mean_ms",
    "latency_std_ms",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub method: String,
    pub report: CohortReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub pipelines: Vec<PipelineReport>,
}

impl ExperimentReport {
    pub fn pipeline(&self, method: &str) -> Option<&CohortReport> {
        self.pipelines
            .iter()
            .find(|p| p.method == method)
            .map(|p| &p.report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::UnknownFormat(s.to_owned())),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    band: String,
    class: String,
    ap: Option<f64>,
    ate: Option<f64>,
    ase: Option<f64>,
    aoe: Option<f64>,
    cds: Option<f64>,
    latency_mean_ms: Option<f64>,
    latency_std_ms: Option<f64>,
}

fn csv_rows(report: &ExperimentReport) -> Vec<CsvRow<'_>> {
    let mut rows = Vec::new();
    for p in &report.pipelines {
        let mean = p.report.latency.as_ref().map(|l| l.mean_ms);
        let std = p.report.latency.as_ref().map(|l| l.std_ms);
        for b in &p.report.bands {
            for c in &b.classes {
                rows.push(CsvRow {
                    method: &p.method,
                    band: b.band.label(),
                    class: c.class_id.to_string(),
                    ap: Some(c.ap),
                    ate: Some(c.ate),
                    ase: Some(c.ase),
                    aoe: Some(c.aoe),
                    cds: Some(c.cds),
                    latency_mean_ms: mean,
                    latency_std_ms: std,
                });
            }
            let agg = b.aggregate.as_ref();
            rows.push(CsvRow {
                method: &p.method,
                band: b.band.label(),
                class: "all".into(),
                ap: agg.map(|a| a.ap),
                ate: agg.map(|a| a.ate),
                ase: agg.map(|a| a.ase),
                aoe: agg.map(|a| a.aoe),
                cds: agg.map(|a| a.cds),
                latency_mean_ms: mean,
                latency_std_ms: std,
            });
        }
    }
    rows
}

/// Encodes a report. CSV has one row per (pipeline, band, class) plus a
/// `class = all` row per band; JSON carries everything.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report)?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(Vec::new());
            w.write_record(CSV_COLUMNS)?;
            for row in csv_rows(report) {
                w.serialize(row)?;
            }
            w.into_inner()
                .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
        }
    }
}

pub fn parse_json_report(bytes: &[u8]) -> Result<ExperimentReport> {
    Ok(serde_json::from_slice(bytes)?)
}
