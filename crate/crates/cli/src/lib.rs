//! Reproducible runs on top of `relm`: dataset generation, training,
//! margin sweeps, margin histograms and similarity probes. Each command is
//! described by a [`config::RunConfig`] that is saved with its outputs.

pub mod config;
pub mod error;
pub mod hist;
pub mod probe;
pub mod sweep;
pub mod train;

use relm::data::generate_synthetic;

use config::{GenRun, RunConfig};
pub use error::{CliError, Result};

/// What a command produced, for the terminal summary.
#[derive(Debug)]
pub enum Outcome {
    Generated { items: usize },
    Trained(relm::metrics::ReportRow),
    Swept(sweep::SweepReport),
    Histogram(relm::mining::MarginHistogram),
    Probed(probe::ProbeReport),
}

pub fn generate(cfg: &GenRun) -> Result<usize> {
    let dataset = generate_synthetic(&cfg.spec)?;
    dataset.save(&cfg.out)?;
    RunConfig::Gen(cfg.clone()).write(&cfg.out)?;
    Ok(dataset.len())
}

pub fn execute(config: &RunConfig) -> Result<Outcome> {
    Ok(match config {
        RunConfig::Gen(c) => Outcome::Generated { items: generate(c)? },
        RunConfig::Train(c) => Outcome::Trained(train::run(c)?),
        RunConfig::Sweep(c) => Outcome::Swept(sweep::run(c)?),
        RunConfig::Hist(c) => Outcome::Histogram(hist::run(c)?),
        RunConfig::Probe(c) => Outcome::Probed(probe::run(c)?),
    })
}
