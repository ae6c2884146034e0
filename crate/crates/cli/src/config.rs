//! Resolved run configurations. Every command is driven by one of these and
//! writes it as `config.json` next to its outputs, so `relm replay` can
//! rerun it.

use std::fs;
use std::path::{Path, PathBuf};

use relm::data::{generate_synthetic, load_dataset_dir, Dataset, SyntheticSpec};
use relm::embed::TrainConfig;
use relm::mining::NegativeConstraint;
use relm::relevance::Level;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    /// A directory written by `relm gen` (or laid out the same way).
    Dir { path: PathBuf },
    /// Generated in memory. With `run_seed` the spec's own seed is replaced
    /// by the seed of the run that loads it.
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default)]
        run_seed: bool,
    },
}

impl DataSource {
    /// The standard benchmark, seeded per run.
    pub fn benchmark() -> Self {
        DataSource::Synthetic { spec: SyntheticSpec::benchmark(0), run_seed: true }
    }

    pub fn load(&self, seed: u64) -> Result<Dataset> {
        Ok(match self {
            DataSource::Dir { path } => load_dataset_dir(path)?,
            DataSource::Synthetic { spec, run_seed: false } => generate_synthetic(spec)?,
            DataSource::Synthetic { spec, run_seed: true } => {
                generate_synthetic(&SyntheticSpec { seed, ..spec.clone() })?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRun {
    pub spec: SyntheticSpec,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub run_id: String,
    pub out: PathBuf,
    pub data: DataSource,
    pub train: TrainConfig,
    /// Extra CSV the report row is appended to.
    #[serde(default)]
    pub report_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub run_id: String,
    pub out: PathBuf,
    pub data: DataSource,
    /// Shared settings; margin and seed are replaced per cell.
    pub base: TrainConfig,
    pub margins: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HistSource {
    /// Margins logged while training, summed over epochs (global level only).
    RunDir { path: PathBuf },
    /// A triplet dump with a `margin` column.
    Triplets { path: PathBuf },
    /// One round of offline mining on the training split.
    Mine {
        data: DataSource,
        seed: u64,
        per_example: usize,
        constraint: NegativeConstraint,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistRun {
    pub run_id: String,
    pub out: PathBuf,
    pub source: HistSource,
    pub level: Level,
}

/// Which captions count as similar to the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarRule {
    /// Shares a verb or a noun class.
    Either,
    /// Shares a verb class, different nouns.
    SameVerb,
    /// Shares a noun class, different verbs.
    SameNoun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub run_id: String,
    pub out: PathBuf,
    pub checkpoint: PathBuf,
    pub data: DataSource,
    pub seed: u64,
    pub query: String,
    pub k_similar: usize,
    pub similar: SimilarRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Gen(GenRun),
    Train(TrainRun),
    Sweep(SweepRun),
    Hist(HistRun),
    Probe(ProbeRun),
}

impl RunConfig {
    /// Directory that receives the outputs and `config.json`.
    pub fn run_dir(&self) -> PathBuf {
        match self {
            RunConfig::Gen(c) => c.out.clone(),
            RunConfig::Train(c) => c.out.join(&c.run_id),
            RunConfig::Sweep(c) => c.out.join(&c.run_id),
            RunConfig::Hist(c) => c.out.join(&c.run_id),
            RunConfig::Probe(c) => c.out.join(&c.run_id),
        }
    }

    pub fn with_out(mut self, out: PathBuf) -> Self {
        match &mut self {
            RunConfig::Gen(c) => c.out = out,
            RunConfig::Train(c) => c.out = out,
            RunConfig::Sweep(c) => c.out = out,
            RunConfig::Hist(c) => c.out = out,
            RunConfig::Probe(c) => c.out = out,
        }
        self
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(&path, s).map_err(|e| CliError::io(path, e))
    }
}

/// `fixed:0.5` -> `fixed0.5`, safe as a directory name.
pub fn slug(s: &str) -> String {
    s.chars().filter(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_')).collect()
}
