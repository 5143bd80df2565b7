use std::fs;
use std::path::Path;

use serde::Serialize;

use super::run::{ExperimentReport, NoiseSuiteReport, RunFailure, SweepReport};
use super::stats::Stat;
use crate::error::Result;
use crate::optim::MetricsLog;

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_metrics(dir: &Path, log: &MetricsLog) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), log.to_csv())?;
    Ok(())
}

#[derive(Serialize)]
struct SpectrumFile<'a> {
    lambda_max: Stat,
    reports: Vec<(usize, &'a crate::analysis::SpectrumReport)>,
}

#[derive(Serialize)]
struct BoundFile<'a> {
    total: Stat,
    test_err: Stat,
    reports: Vec<(usize, &'a crate::analysis::BoundReport)>,
}

/// Writes `metrics.csv` and `summary.json`, plus `spectrum.json` and
/// `bound.json` when those analyses ran.
pub fn write_experiment(report: &ExperimentReport, dir: &Path) -> Result<()> {
    write_metrics(dir, &report.metrics)?;
    write_json(&dir.join("summary.json"), &report.summary)?;
    let a = &report.summary.analyses;
    let spectra: Vec<_> = a
        .iter()
        .filter_map(|r| r.spectrum.as_ref().map(|s| (r.replica, s)))
        .collect();
    if !spectra.is_empty() {
        let lm: Vec<f64> = spectra.iter().map(|(_, s)| s.lambda_max).collect();
        write_json(
            &dir.join("spectrum.json"),
            &SpectrumFile {
                lambda_max: Stat::of(&lm),
                reports: spectra,
            },
        )?;
    }
    let bounds: Vec<_> = a
        .iter()
        .filter_map(|r| r.bound.as_ref().map(|b| (r.replica, b)))
        .collect();
    if !bounds.is_empty() {
        let totals: Vec<f64> = bounds.iter().map(|(_, b)| b.total).collect();
        let errs: Vec<f64> = a
            .iter()
            .filter(|r| r.bound.is_some())
            .map(|r| r.test_err)
            .collect();
        write_json(
            &dir.join("bound.json"),
            &BoundFile {
                total: Stat::of(&totals),
                test_err: Stat::of(&errs),
                reports: bounds,
            },
        )?;
    }
    Ok(())
}

/// Writes `metrics.csv`, `noise_suite.csv` and `summary.json`.
pub fn write_noise_suite(report: &NoiseSuiteReport, dir: &Path) -> Result<()> {
    write_metrics(dir, &report.metrics)?;
    fs::write(dir.join("noise_suite.csv"), report.table_csv())?;
    write_json(&dir.join("summary.json"), &report.summary)
}

/// Writes `metrics.csv`, `msharpness.csv` and `summary.json`.
pub fn write_sweep(report: &SweepReport, dir: &Path) -> Result<()> {
    write_metrics(dir, &report.metrics)?;
    fs::write(dir.join("msharpness.csv"), report.table_csv())?;
    write_json(&dir.join("summary.json"), &report.summary)
}

/// Flushes the rows logged before a failure.
pub fn write_partial(failure: &RunFailure, dir: &Path) -> Result<()> {
    write_metrics(dir, &failure.partial)
}

/// Writes `value` as pretty JSON to `path`, creating parent directories.
pub fn write_json_file<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_json(path, value)
}
