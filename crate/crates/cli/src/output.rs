//! CSV tables. Each file starts with a `#` line naming its schema version.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

pub const REPORT_SCHEMA: &str = "# sylvopt report v1";
pub const CONVERGENCE_SCHEMA: &str = "# sylvopt convergence v1";

/// One run. Solver columns are empty in oracle mode, oracle columns in solve mode.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ReportRow {
    pub cell: usize,
    pub mode: String,
    pub pde: String,
    pub case: String,
    pub level: u32,
    pub n: usize,
    pub n_t: usize,
    pub beta: f64,
    pub epsilon: Option<f64>,
    pub unobserved: usize,
    pub truncation: String,
    pub p: Option<usize>,
    pub rank: Option<usize>,
    pub iterations: Option<usize>,
    pub time_s: Option<f64>,
    pub memory_mb: Option<f64>,
    pub converged: Option<bool>,
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    pub rho3: Option<f64>,
    pub oracle_time_s: Option<f64>,
    pub oracle_residual: Option<f64>,
    pub err_y: Option<f64>,
    pub err_l: Option<f64>,
    pub err_u: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub cell: usize,
    pub iteration: usize,
    pub p: usize,
    pub r1: f64,
    pub r2: f64,
    pub rho3: f64,
    pub time_s: f64,
}

/// Writes `rows` after the schema line; the header row is written even without rows.
pub fn write_table<T: Serialize>(path: &Path, schema: &str, header: &[&str], rows: &[T]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{schema}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const REPORT_HEADER: [&str; 26] = [
    "cell",
    "mode",
    "pde",
    "case",
    "level",
    "n",
    "n_t",
    "beta",
    "epsilon",
    "unobserved",
    "truncation",
    "p",
    "rank",
    "iterations",
    "time_s",
    "memory_mb",
    "converged",
    "r1",
    "r2",
    "rho3",
    "oracle_time_s",
    "oracle_residual",
    "err_y",
    "err_l",
    "err_u",
    "status",
];

pub const CONVERGENCE_HEADER: [&str; 7] = ["cell", "iteration", "p", "r1", "r2", "rho3", "time_s"];

pub fn write_report(dir: &Path, rows: &[ReportRow]) -> Result<()> {
    write_table(&dir.join("report.csv"), REPORT_SCHEMA, &REPORT_HEADER, rows)
}

pub fn write_convergence(dir: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    write_table(&dir.join("convergence.csv"), CONVERGENCE_SCHEMA, &CONVERGENCE_HEADER, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_fields() {
        let row = ReportRow { status: "a,b".into(), epsilon: Some(0.5), ..Default::default() };
        let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(vec![]);
        w.serialize(&row).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, REPORT_HEADER.join(","));
        assert!(text.contains("\"a,b\""));
    }

    #[test]
    fn table_starts_with_schema_line() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![ConvergenceRow { cell: 0, iteration: 1, p: 2, r1: 0.5, r2: 0.25, rho3: 0.0, time_s: 0.1 }];
        write_convergence(dir.path(), &rows).unwrap();
        let text = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], CONVERGENCE_SCHEMA);
        assert_eq!(lines[1], CONVERGENCE_HEADER.join(","));
        assert_eq!(lines[2], "0,1,2,0.5,0.25,0.0,0.1");
    }
}
