//! Evaluation reports as CSV (one row per cell) and JSON (cells plus
//! seed aggregates).

use std::fs;
use std::path::Path;

use mppde_core::eval::{aggregate_over_seeds, Aggregate, EvalReport, EvalRow};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: serde_json::Value,
    pub reports: Vec<EvalReport>,
    pub aggregates: Vec<Aggregate>,
}

impl ReportFile {
    pub fn new(reports: Vec<EvalReport>, config: serde_json::Value) -> Self {
        let aggregates = aggregate_over_seeds(&reports);
        Self { config, reports, aggregates }
    }
}

pub fn csv_string(rows: &[EvalRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

pub fn parse_csv(text: &str) -> std::result::Result<Vec<EvalRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

pub fn write(report: &ReportFile, csv_path: &Path, json_path: &Path) -> Result<()> {
    for p in [csv_path, json_path] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    let rows: Vec<EvalRow> = report.reports.iter().map(EvalReport::row).collect();
    fs::write(csv_path, csv_string(&rows)).map_err(|e| CliError::io(csv_path, e))?;
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    fs::write(json_path, json).map_err(|e| CliError::io(json_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mppde_core::eval::CSV_COLUMNS;

    #[test]
    fn header_and_round_trip() {
        let rows = vec![
            EvalRow {
                preset: "e1".into(),
                n_t: 100,
                n_x: 40,
                solver: "weno5".into(),
                seed: 3,
                acc_error: 0.1 + 0.2,
                survival_time: 4.0,
                runtime_ms: 12.5,
            },
            EvalRow { solver: "m,p".into(), acc_error: 1e-300, ..rows_default() },
        ];
        let text = csv_string(&rows);
        assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(parse_csv(&text).unwrap(), rows);
    }

    fn rows_default() -> EvalRow {
        EvalRow {
            preset: "e2".into(),
            n_t: 1,
            n_x: 2,
            solver: String::new(),
            seed: 0,
            acc_error: 0.0,
            survival_time: 0.0,
            runtime_ms: 0.0,
        }
    }
}
