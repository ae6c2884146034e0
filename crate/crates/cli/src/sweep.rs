use std::path::Path;

use rayon::prelude::*;
use relm::embed::TrainConfig;
use relm::loss::MarginSpec;
use relm::metrics::ReportRow;
use serde::{Deserialize, Serialize};

use crate::config::{slug, RunConfig, SweepRun, TrainRun};
use crate::error::{CliError, Result};
use crate::train::{self, write_text};

pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const CELLS_DIR: &str = "cells";
pub const THREADS_ENV: &str = "RELM_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    /// `fixed:<v>` or `relevance`.
    pub setting: String,
    pub seed: u64,
    pub run_id: String,
    pub error: Option<String>,
    pub report: Option<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    pub setting: String,
    pub runs: usize,
    pub ndcg_avg_mean: f64,
    pub ndcg_avg_std: f64,
    pub map_avg_mean: f64,
    pub map_avg_std: f64,
    pub r1_avg_mean: f64,
    pub r1_avg_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepCell>,
    pub summary: Vec<SettingSummary>,
}

impl SweepReport {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn setting(&self, name: &str) -> Option<&SettingSummary> {
        self.summary.iter().find(|s| s.setting == name)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(SWEEP_JSON);
        let raw = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-setting statistics over the successful cells, in first-seen order.
pub fn summarize(rows: &[SweepCell]) -> Vec<SettingSummary> {
    let mut settings: Vec<&str> = Vec::new();
    for r in rows {
        if !settings.contains(&r.setting.as_str()) {
            settings.push(&r.setting);
        }
    }
    settings
        .into_iter()
        .filter_map(|setting| {
            let ok: Vec<&ReportRow> = rows
                .iter()
                .filter(|r| r.setting == setting)
                .filter_map(|r| r.report.as_ref())
                .collect();
            if ok.is_empty() {
                return None;
            }
            let stat = |f: fn(&ReportRow) -> f64| mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (ndcg_avg_mean, ndcg_avg_std) = stat(|r| r.ndcg_avg);
            let (map_avg_mean, map_avg_std) = stat(|r| r.map_avg);
            let (r1_avg_mean, r1_avg_std) = stat(|r| r.r1_avg);
            Some(SettingSummary {
                setting: setting.to_string(),
                runs: ok.len(),
                ndcg_avg_mean,
                ndcg_avg_std,
                map_avg_mean,
                map_avg_std,
                r1_avg_mean,
                r1_avg_std,
            })
        })
        .collect()
}

fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV}={v} is not a thread count"))),
        Err(_) => Ok(0),
    }
}

/// Grid cells in report order: each fixed margin over all seeds, then the
/// relevance margin over all seeds.
pub fn cells(cfg: &SweepRun) -> Vec<(MarginSpec, u64)> {
    let settings = cfg
        .margins
        .iter()
        .map(|&m| MarginSpec::Fixed(m))
        .chain([MarginSpec::Relevance]);
    settings
        .flat_map(|m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect()
}

pub fn run(cfg: &SweepRun) -> Result<SweepReport> {
    if cfg.margins.is_empty() || cfg.seeds.is_empty() {
        return Err(CliError::Usage("a sweep needs at least one margin and one seed".into()));
    }
    for &m in &cfg.margins {
        if !(0.0..=1.5).contains(&m) {
            return Err(CliError::Usage(format!("fixed margin {m} outside [0, 1.5]")));
        }
    }
    let dir = cfg.out.join(&cfg.run_id);
    RunConfig::Sweep(cfg.clone()).write(&dir)?;
    let cells_dir = dir.join(CELLS_DIR);

    let grid = cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(thread_count()?).build()?;
    let rows: Vec<SweepCell> = pool.install(|| {
        grid.par_iter()
            .map(|&(margin, seed)| {
                let setting = margin.to_string();
                let run_id = format!("{}-s{seed}", slug(&setting));
                let mut train_cfg: TrainConfig = cfg.base.clone();
                train_cfg.seed = seed;
                train_cfg.loss.margin = margin;
                let cell = TrainRun {
                    run_id: run_id.clone(),
                    out: cells_dir.clone(),
                    data: cfg.data.clone(),
                    train: train_cfg,
                    report_csv: None,
                };
                let (report, error) = match train::run(&cell) {
                    Ok(row) => (Some(row), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                SweepCell { setting, seed, run_id, error, report }
            })
            .collect()
    });

    let report = SweepReport { summary: summarize(&rows), rows };
    write_text(&dir.join(SWEEP_JSON), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write_sweep_csv(&dir.join(SWEEP_CSV), &report.rows)?;
    let path = dir.join(SUMMARY_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::csv(&path, e))?;
    for s in &report.summary {
        w.serialize(s).map_err(|e| CliError::csv(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let failed = report.failed();
    if failed > 0 {
        return Err(CliError::SweepFailed {
            failed,
            total: report.rows.len(),
            report: dir.join(SWEEP_JSON),
        });
    }
    Ok(report)
}

/// The report CSV columns plus `setting`, `status` and `error`; metric
/// fields are empty for failed cells.
fn write_sweep_csv(path: &Path, rows: &[SweepCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let mut header: Vec<&str> = vec!["setting", "status", "error"];
    header.extend(ReportRow::HEADER);
    w.write_record(&header).map_err(|e| CliError::csv(path, e))?;
    for cell in rows {
        let mut record = vec![
            cell.setting.clone(),
            if cell.error.is_some() { "failed" } else { "ok" }.to_string(),
            cell.error.clone().unwrap_or_default(),
        ];
        match &cell.report {
            Some(r) => record.extend(report_fields(r)),
            None => {
                record.push(cell.run_id.clone());
                record.extend(std::iter::repeat_n(String::new(), ReportRow::HEADER.len() - 1));
            }
        }
        w.write_record(&record).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn report_fields(r: &ReportRow) -> Vec<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(r).expect("report rows serialize");
    let bytes = w.into_inner().expect("in-memory writer");
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes.as_slice());
    let record = rd.records().next().expect("one record").expect("valid csv");
    record.iter().map(String::from).collect()
}
