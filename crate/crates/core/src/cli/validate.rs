//! Dry-run checks. Nothing is written; every problem becomes a finding.

use std::path::Path;

use crate::data::io::{load_benchmark_rows, load_frame, load_respondents};
use crate::data::{filter_eligible, BenchmarkTable, CovariateSchema};

use super::config::RunConfig;

fn path_finding<'a>(findings: &mut Vec<String>, path: &'a Option<std::path::PathBuf>, name: &str) -> Option<&'a Path> {
    match path.as_deref() {
        Some(p) => Some(p),
        None => {
            findings.push(format!("`{name}` path is not set"));
            None
        }
    }
}

pub fn validate(config: &RunConfig) -> Vec<String> {
    let mut findings = Vec::new();
    if let Err(e) = config.validate() {
        findings.push(e.to_string());
    }

    let schema = path_finding(&mut findings, &config.schema, "schema").and_then(|p| match CovariateSchema::load(p) {
        Ok(s) => Some(s),
        Err(e) => {
            findings.push(format!("schema: {e}"));
            None
        }
    });

    let benchmarks = path_finding(&mut findings, &config.benchmarks, "benchmarks").and_then(|p| {
        match load_benchmark_rows(p).and_then(|rows| rows.build()) {
            Ok(table) => Some(table),
            Err(e) => {
                findings.push(format!("{}: {e}", p.display()));
                None
            }
        }
    });
    if let (Some(mode), Some(table)) = (config.mode, &benchmarks) {
        let matches = matches!(
            (mode, table),
            (crate::simulator::CalibrationMode::Cells, BenchmarkTable::Cells(_))
                | (crate::simulator::CalibrationMode::Margins, BenchmarkTable::Margins(_))
        );
        if !matches {
            findings.push(format!("mode does not match the {} benchmark file", table.mode_name()));
        }
    }

    let Some(schema) = schema else {
        return findings;
    };

    if let Some(path) = path_finding(&mut findings, &config.frame, "frame") {
        match load_frame(path, &schema) {
            Ok(frame) => {
                let sampled = frame.iter().filter(|u| u.sampled).count();
                let responded = frame.iter().filter(|u| u.responded).count();
                if responded == 0 || responded == sampled {
                    findings.push(format!(
                        "{}: {responded} of {sampled} sampled units responded; the propensity fit is degenerate",
                        path.display()
                    ));
                }
            }
            Err(e) => findings.push(format!("{}: {e}", path.display())),
        }
    }

    if let Some(path) = path_finding(&mut findings, &config.respondents, "respondents") {
        match load_respondents(path, &schema) {
            Ok(respondents) => {
                if filter_eligible(&respondents, config.min_answered).is_empty() {
                    findings.push(format!(
                        "{}: no respondent answered at least {} questions",
                        path.display(),
                        config.min_answered
                    ));
                }
                if let Some(table) = &benchmarks {
                    for (row, message) in table.coverage_findings(&respondents, &schema) {
                        findings.push(format!("{} row {row}: {message}", path.display()));
                    }
                }
            }
            Err(e) => findings.push(format!("{}: {e}", path.display())),
        }
    }
    findings
}
