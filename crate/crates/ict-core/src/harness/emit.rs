//! Report emission: canonical JSON, CSV and markdown projections.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{RankTable, RunReport, SweepReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for EmitFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(EmitFormat::Json),
            "csv" => Ok(EmitFormat::Csv),
            "markdown" | "md" => Ok(EmitFormat::Markdown),
            other => Err(Error::InvalidConfig(format!("unknown format '{other}'"))),
        }
    }
}

/// Canonical JSON: pretty-printed with the struct field order, trailing
/// newline. Identical values serialize to identical bytes.
pub fn to_canonical_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn fmt_mean_se(mean: f64, se: Option<f64>) -> String {
    match se {
        Some(se) => format!("{mean:.4} ± {se:.4}"),
        None => format!("{mean:.4}"),
    }
}

fn csv_rows(report: &RunReport, param: Option<(&str, f64)>) -> String {
    let mut out = String::new();
    for t in &report.trials {
        if let Some((_, value)) = param {
            let _ = write!(out, "{value},");
        }
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            report.task,
            report.method,
            t.seed,
            t.best_normalized,
            t.median_normalized,
            t.exceeds_reference_max
        );
    }
    out
}

const CSV_HEADER: &str = "task,method,seed,best_normalized,median_normalized,exceeds_reference_max";

pub fn report_csv(reports: &[&RunReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        out.push_str(&csv_rows(r, None));
    }
    out
}

/// Markdown table mirroring the usual benchmark layout: one row per
/// task/method pair with aggregated percentiles.
pub fn report_markdown(reports: &[&RunReport]) -> String {
    let mut out = String::from(
        "| task | method | 100th pct (mean ± se) | 50th pct (mean ± se) |\n|---|---|---|---|\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            r.task,
            r.method,
            fmt_mean_se(r.best_mean, r.best_stderr),
            fmt_mean_se(r.median_mean, r.median_stderr),
        );
    }
    out
}

/// Renders one report in the chosen format.
pub fn to_canonical(report: &RunReport, format: EmitFormat) -> Result<String> {
    Ok(match format {
        EmitFormat::Json => to_canonical_json(report)?,
        EmitFormat::Csv => report_csv(&[report]),
        EmitFormat::Markdown => report_markdown(&[report]),
    })
}

/// Writes one report in the chosen format.
pub fn emit_report(report: &RunReport, format: EmitFormat, path: &Path) -> Result<()> {
    write_file(path, &to_canonical(report, format)?)
}

/// Writes a group of reports (e.g. several methods on one task).
pub fn emit_reports(reports: &[RunReport], format: EmitFormat, path: &Path) -> Result<()> {
    let refs: Vec<&RunReport> = reports.iter().collect();
    let contents = match format {
        EmitFormat::Json => to_canonical_json(&reports)?,
        EmitFormat::Csv => report_csv(&refs),
        EmitFormat::Markdown => report_markdown(&refs),
    };
    write_file(path, &contents)
}

/// Reads back a canonical JSON report.
pub fn read_report_json(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes a sweep as one combined table (or canonical JSON).
pub fn emit_sweep(sweep: &SweepReport, format: EmitFormat, path: &Path) -> Result<()> {
    write_file(path, &sweep_to_canonical(sweep, format)?)
}

/// Renders a sweep in the chosen format.
pub fn sweep_to_canonical(sweep: &SweepReport, format: EmitFormat) -> Result<String> {
    let contents = match format {
        EmitFormat::Json => to_canonical_json(sweep)?,
        EmitFormat::Csv => {
            let mut out = format!("{},{CSV_HEADER}\n", sweep.param);
            for e in &sweep.entries {
                out.push_str(&csv_rows(&e.report, Some((&sweep.param.to_string(), e.value))));
            }
            out
        }
        EmitFormat::Markdown => {
            let mut out = format!(
                "| {} | task | method | 100th pct (mean ± se) | 50th pct (mean ± se) |\n|---|---|---|---|---|\n",
                sweep.param
            );
            for e in &sweep.entries {
                let r = &e.report;
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    e.value,
                    r.task,
                    r.method,
                    fmt_mean_se(r.best_mean, r.best_stderr),
                    fmt_mean_se(r.median_mean, r.median_stderr),
                );
            }
            out
        }
    };
    Ok(contents)
}

/// Writes a rank table.
pub fn emit_rank_table(table: &RankTable, format: EmitFormat, path: &Path) -> Result<()> {
    let contents = match format {
        EmitFormat::Json => to_canonical_json(table)?,
        EmitFormat::Csv => {
            let mut out = String::from("method,mean_rank,median_rank\n");
            for m in &table.methods {
                let _ = writeln!(out, "{},{},{}", m.method, m.mean_rank, m.median_rank);
            }
            out
        }
        EmitFormat::Markdown => {
            let mut out = String::from("| method | mean rank | median rank |\n|---|---|---|\n");
            for m in &table.methods {
                let _ = writeln!(
                    out,
                    "| {} | {:.2} | {:.2} |",
                    m.method, m.mean_rank, m.median_rank
                );
            }
            out
        }
    };
    write_file(path, &contents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ExperimentConfig, Method, TrialReport};

    fn sample_report() -> RunReport {
        let config = ExperimentConfig::new("quadratic-bowl-8d", Method::Ict).unwrap();
        RunReport {
            task: "quadratic-bowl-8d".into(),
            method: Method::Ict,
            dataset_size: 64,
            dataset_best_normalized: 0.8123,
            noise_scale_used: Some(0.21),
            ascent_rate_used: 0.05,
            best_mean: 0.95,
            best_stderr: Some(0.01),
            median_mean: 0.9,
            median_stderr: Some(0.02),
            trials: vec![
                TrialReport {
                    seed: 0,
                    best_normalized: 0.94,
                    median_normalized: 0.88,
                    best_raw_score: -1.0,
                    exceeds_reference_max: false,
                    l_sel_mean: None,
                    l_ign_mean: None,
                    best_trajectory_normalized: vec![0.8, 0.94],
                },
                TrialReport {
                    seed: 1,
                    best_normalized: 0.96,
                    median_normalized: 0.92,
                    best_raw_score: -0.5,
                    exceeds_reference_max: false,
                    l_sel_mean: Some(0.1),
                    l_ign_mean: Some(0.2),
                    best_trajectory_normalized: vec![0.8, 0.96],
                },
            ],
            config,
        }
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let report = sample_report();
        emit_report(&report, EmitFormat::Json, &path).unwrap();
        let first = fs::read(&path).unwrap();
        let reread = read_report_json(&path).unwrap();
        emit_report(&reread, EmitFormat::Json, &path).unwrap();
        let second = fs::read(&path).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn csv_has_one_row_per_trial() {
        let report = sample_report();
        let csv = report_csv(&[&report]);
        let rows: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(rows.len(), 1 + report.trials.len());
        assert_eq!(rows[0], CSV_HEADER);
    }

    #[test]
    fn markdown_has_the_expected_columns() {
        let report = sample_report();
        let md = report_markdown(&[&report]);
        let header = md.lines().next().unwrap();
        assert_eq!(
            header,
            "| task | method | 100th pct (mean ± se) | 50th pct (mean ± se) |"
        );
        assert!(md.contains("| quadratic-bowl-8d | ict | 0.9500 ± 0.0100 | 0.9000 ± 0.0200 |"));
    }
}
