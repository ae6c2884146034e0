use std::fs::{self, OpenOptions};
use std::io::BufWriter;
use std::path::Path;

use relm::embed::{train, TrainConfig};
use relm::metrics::{evaluate, EvalReport, ReportRow};
use relm::relevance::relevance_matrix;

use crate::config::{RunConfig, TrainRun};
use crate::error::{CliError, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAINLOG_FILE: &str = "trainlog.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const HIST_CSV: &str = "hist.csv";

pub fn report_row(run_id: &str, config: &TrainConfig, report: &EvalReport) -> ReportRow {
    ReportRow {
        run_id: run_id.to_string(),
        margin_mode: config.loss.margin.mode().to_string(),
        margin_value: config.loss.margin.fixed_value(),
        mining: config.mining.to_string(),
        loss_terms: config.loss.terms_label(),
        seed: config.seed,
        ndcg_t2v: report.ndcg_t2v,
        ndcg_v2t: report.ndcg_v2t,
        ndcg_avg: report.ndcg_avg,
        map_t2v: report.map_t2v,
        map_v2t: report.map_v2t,
        map_avg: report.map_avg,
        r1_avg: report.r1_avg,
        r5_avg: report.r5_avg,
        r10_avg: report.r10_avg,
        skipped_queries: report.skipped_queries,
    }
}

/// Trains, evaluates the kept model on the test split and writes the run
/// directory.
pub fn run(cfg: &TrainRun) -> Result<ReportRow> {
    let dir = cfg.out.join(&cfg.run_id);
    RunConfig::Train(cfg.clone()).write(&dir)?;

    let dataset = cfg.data.load(cfg.train.seed)?;
    let outcome = train(&dataset, &cfg.train)?;
    let test = &dataset.splits().test;
    let test_annotations = dataset.split_annotations(test);
    let rel = relevance_matrix(&test_annotations, &test_annotations)?;
    let report = evaluate(&outcome.model, &dataset, test, &rel)?;
    let row = report_row(&cfg.run_id, &cfg.train, &report);

    let path = dir.join(CHECKPOINT_FILE);
    let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    outcome
        .model
        .write_checkpoint(BufWriter::new(file))
        .map_err(|e| CliError::io(&path, e))?;
    write_text(&dir.join(TRAINLOG_FILE), &outcome.log.to_jsonl()?)?;
    write_text(&dir.join(REPORT_JSON), &(serde_json::to_string_pretty(&row)? + "\n"))?;
    write_rows(&dir.join(REPORT_CSV), std::slice::from_ref(&row))?;
    write_text(&dir.join(HIST_CSV), &outcome.log.margin_histogram().to_csv())?;
    if let Some(extra) = &cfg.report_csv {
        append_row(extra, &row)?;
    }
    Ok(row)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_rows(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Appends `row`, writing the header first when the file is new or empty.
pub fn append_row(path: &Path, row: &ReportRow) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row).map_err(|e| CliError::csv(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| CliError::csv(path, e)))
        .collect()
}
