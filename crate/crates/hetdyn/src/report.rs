//! Analysis outputs: `report.json` plus plot-ready CSV tables.

use std::path::Path;

use hetdyn_core::analyze::AnalysisReport;
use serde::Serialize;

use crate::analysis::Analysis;
use crate::error::{HdynError, Result};
use crate::run::csv_error;

pub const REPORT_FILE: &str = "report.json";
pub const PROFILES_CSV: &str = "profiles.csv";
pub const EMBEDDING_CSV: &str = "embedding.csv";
pub const RECOVERED_CSV: &str = "recovered.csv";

/// JSON Schema that every `report.json` validates against.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| HdynError::io(path, e))
}

pub fn report_json(report: &AnalysisReport) -> String {
    // Non-finite numbers have no JSON form and are written as null.
    serde_json::to_string_pretty(report).expect("reports serialize")
}

pub fn write_analysis(analysis: &Analysis, dir: &Path) -> Result<()> {
    let path = dir.join(REPORT_FILE);
    std::fs::write(&path, report_json(&analysis.report)).map_err(|e| HdynError::io(&path, e))?;
    write_csv(&analysis.profiles, &dir.join(PROFILES_CSV))?;
    write_csv(&analysis.embedding, &dir.join(EMBEDDING_CSV))?;
    write_csv(&analysis.recovered, &dir.join(RECOVERED_CSV))
}

pub fn read_report(path: &Path) -> Result<AnalysisReport> {
    let text = std::fs::read_to_string(path).map_err(|e| HdynError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HdynError::parse(path, e.to_string()))
}
