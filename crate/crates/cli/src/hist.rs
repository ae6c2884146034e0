use std::fs;
use std::path::Path;

use relm::embed::TrainLog;
use relm::loss::{Term, TermKind};
use relm::mining::{mine_offline, Direction, MarginHistogram, Triplet};
use relm::relevance::{margin_for, CaptionAnnotation, Level};
use serde::{Deserialize, Serialize};

use crate::config::{HistRun, HistSource, RunConfig};
use crate::error::{CliError, Result};
use crate::train::{write_text, HIST_CSV, TRAINLOG_FILE};

pub const HIST_JSON: &str = "hist.json";
pub const TRIPLETS_CSV: &str = "triplets.csv";

/// One line of a triplet dump; items are referred to by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
    pub direction: Direction,
    pub level: Level,
    pub margin: f64,
}

impl TripletRecord {
    pub fn new(t: &Triplet, annotations: &[CaptionAnnotation]) -> Self {
        let (a, n) = (&annotations[t.anchor], &annotations[t.negative]);
        Self {
            anchor: a.id.clone(),
            positive: annotations[t.positive].id.clone(),
            negative: n.id.clone(),
            direction: t.direction,
            level: t.level,
            margin: margin_for(a, n, t.level).value(),
        }
    }
}

pub fn write_triplets(path: &Path, records: &[TripletRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_triplets(path: &Path) -> Result<Vec<TripletRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| CliError::csv(path, e)))
        .collect()
}

/// Bins the margins of the records at `level`. Every sampled negative
/// appears once per direction, so only the first direction present (in
/// `cross-t2v`, `cross-v2t`, `within-text`, `within-video` order) is counted.
pub fn histogram_of_records(records: &[TripletRecord], level: Level) -> MarginHistogram {
    let at_level: Vec<&TripletRecord> = records.iter().filter(|r| r.level == level).collect();
    let rep = at_level.iter().map(|r| r.direction).min();
    let mut h = MarginHistogram::default();
    for r in at_level.into_iter().filter(|r| Some(r.direction) == rep) {
        h.add(r.margin);
    }
    h
}

pub fn run(cfg: &HistRun) -> Result<MarginHistogram> {
    let dir = cfg.out.join(&cfg.run_id);
    RunConfig::Hist(cfg.clone()).write(&dir)?;

    let hist = match &cfg.source {
        HistSource::RunDir { path } => {
            if cfg.level != Level::Global {
                return Err(CliError::Usage(
                    "training logs hold global-level margins only; use --triplets or --mine for other levels".into(),
                ));
            }
            let log_path = path.join(TRAINLOG_FILE);
            let raw = fs::read_to_string(&log_path).map_err(|e| CliError::io(&log_path, e))?;
            let log = TrainLog::from_jsonl(&raw)?;
            if log.epochs.is_empty() {
                return Err(CliError::Usage(format!("{} has no epochs", log_path.display())));
            }
            log.margin_histogram()
        }
        HistSource::Triplets { path } => {
            let records = read_triplets(path)?;
            let h = histogram_of_records(&records, cfg.level);
            if h.total() == 0 {
                return Err(CliError::Usage(format!(
                    "{} has no {} triplets",
                    path.display(),
                    cfg.level
                )));
            }
            h
        }
        HistSource::Mine { data, seed, per_example, constraint } => {
            let dataset = data.load(*seed)?;
            let term = Term { kind: TermKind::Cross, level: cfg.level };
            let mined = mine_offline(
                dataset.annotations(),
                &dataset.splits().train,
                *per_example,
                *constraint,
                *seed,
                &[term],
            )?;
            let records: Vec<TripletRecord> = mined
                .triplets
                .iter()
                .map(|t| TripletRecord::new(t, dataset.annotations()))
                .collect();
            write_triplets(&dir.join(TRIPLETS_CSV), &records)?;
            histogram_of_records(&records, cfg.level)
        }
    };

    write_text(&dir.join(HIST_CSV), &hist.to_csv())?;
    write_text(&dir.join(HIST_JSON), &(serde_json::to_string_pretty(&hist.to_json())? + "\n"))?;
    Ok(hist)
}
