use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relm::data::SyntheticSpec;
use relm::embed::{MiningMode, TrainConfig};
use relm::loss::{LossConfig, MarginSpec};
use relm::relevance::Level;
use relm_cli::config::{
    slug, DataSource, GenRun, HistRun, HistSource, ProbeRun, RunConfig, SimilarRule, SweepRun, TrainRun,
};
use relm_cli::{execute, CliError, Outcome, Result};

#[derive(Parser)]
#[command(name = "relm", version, about = "Relevance-based margins for cross-modal retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (annotations, features, splits).
    Gen(GenArgs),
    /// Train one model and report test metrics.
    Train(TrainArgs),
    /// Train over a grid of fixed margins plus the relevance margin.
    Sweep(SweepArgs),
    /// Margin histogram from a run, a triplet dump or fresh mining.
    Hist(HistArgs),
    /// Similarity of a query to its video, similar videos and dissimilar ones.
    Probe(ProbeArgs),
    /// Rerun a saved config.json.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 2000)]
    items: usize,
    #[arg(long, default_value_t = 40)]
    verbs: usize,
    #[arg(long, default_value_t = 120)]
    nouns: usize,
    #[arg(long, default_value_t = 1)]
    nouns_min: usize,
    #[arg(long, default_value_t = 3)]
    nouns_max: usize,
    #[arg(long, default_value_t = 256)]
    video_dim: usize,
    #[arg(long, default_value_t = 256)]
    text_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0.3)]
    duplicate_rate: f64,
    /// Zipf exponent of class frequencies (0 = uniform).
    #[arg(long, default_value_t = 1.0)]
    class_skew: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory written by `relm gen`.
    #[arg(long, conflicts_with = "benchmark", required_unless_present = "benchmark")]
    data: Option<PathBuf>,
    /// Use the standard synthetic benchmark, generated with the run seed.
    #[arg(long)]
    benchmark: bool,
}

impl DataArgs {
    fn source(&self) -> DataSource {
        match &self.data {
            Some(path) => DataSource::Dir { path: path.clone() },
            None => DataSource::benchmark(),
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// `a,b,...` from cross|within - global|verb|noun.
    #[arg(long, default_value = "cross-global")]
    loss: String,
    /// `offline`, `offline:verbdiff` or `online-hard`.
    #[arg(long, default_value = "offline")]
    mining: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Joint embedding width.
    #[arg(long)]
    dim: Option<usize>,
    /// Hidden width (default twice the joint width).
    #[arg(long)]
    hidden: Option<usize>,
    /// Negatives drawn per anchor and epoch in offline mining.
    #[arg(long)]
    per_example: Option<usize>,
    #[arg(long)]
    val_interval: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

impl ModelArgs {
    fn config(&self, margin: MarginSpec, seed: u64) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            momentum: self.momentum.unwrap_or(d.momentum),
            seed,
            joint_dim: self.dim.unwrap_or(d.joint_dim),
            hidden_dim: self.hidden.or(d.hidden_dim),
            loss: LossConfig::new(LossConfig::parse_terms(&self.loss)?, margin)?,
            mining: self.mining.parse()?,
            per_example: self.per_example.unwrap_or(d.per_example),
            val_interval: self.val_interval.unwrap_or(d.val_interval),
            patience: self.patience.unwrap_or(d.patience),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// `fixed:<v>` or `relevance`.
    #[arg(long, default_value = "relevance")]
    margin: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    run_id: Option<String>,
    /// Also append the report row to this CSV.
    #[arg(long)]
    report_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Fixed margins to try; the relevance margin is always added.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0,1.1,1.2,1.3,1.4,1.5")]
    margins: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long, default_value = "sweep")]
    run_id: String,
}

#[derive(Args)]
struct HistArgs {
    /// Run directory of a `relm train` run.
    #[arg(long, group = "source")]
    run: Option<PathBuf>,
    /// Triplet dump (`anchor,positive,negative,direction,level,margin`).
    #[arg(long, group = "source")]
    triplets: Option<PathBuf>,
    /// Mine one round of offline triplets from a dataset directory.
    #[arg(long, group = "source")]
    data: Option<PathBuf>,
    /// Mine one round of offline triplets from the standard benchmark.
    #[arg(long, group = "source")]
    benchmark: bool,
    #[arg(long, default_value = "global")]
    level: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    per_example: usize,
    /// `offline` or `offline:verbdiff`.
    #[arg(long, default_value = "offline")]
    mining: String,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long, default_value = "hist")]
    run_id: String,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Item id whose caption is the query.
    #[arg(long)]
    query: String,
    #[arg(long = "k", default_value_t = 10)]
    k_similar: usize,
    #[arg(long, value_enum, default_value = "either")]
    similar: SimilarRule,
    /// Seeds the benchmark and the choice of compared items.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long, default_value = "probe")]
    run_id: String,
}

#[derive(Args)]
struct ReplayArgs {
    config: PathBuf,
    /// Write outputs here instead of the saved output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(command: Command) -> Result<RunConfig> {
    Ok(match command {
        Command::Gen(a) => {
            let spec = SyntheticSpec {
                n_verb_classes: a.verbs,
                n_noun_classes: a.nouns,
                n_items: a.items,
                nouns_min: a.nouns_min,
                nouns_max: a.nouns_max,
                video_dim: a.video_dim,
                text_dim: a.text_dim,
                noise_sigma: a.noise,
                duplicate_rate: a.duplicate_rate,
                class_skew: a.class_skew,
                seed: a.seed,
            };
            spec.validate()?;
            RunConfig::Gen(GenRun { spec, out: a.out })
        }
        Command::Train(a) => {
            let margin: MarginSpec = a.margin.parse()?;
            let train = a.model.config(margin, a.seed)?;
            let run_id = a.run_id.unwrap_or_else(|| slug(&format!("{margin}-s{}", a.seed)));
            RunConfig::Train(TrainRun {
                run_id,
                out: a.out,
                data: a.data.source(),
                train,
                report_csv: a.report_csv,
            })
        }
        Command::Sweep(a) => RunConfig::Sweep(SweepRun {
            run_id: a.run_id,
            out: a.out,
            data: a.data.source(),
            base: a.model.config(MarginSpec::Relevance, a.seeds.first().copied().unwrap_or(1))?,
            margins: a.margins,
            seeds: a.seeds,
        }),
        Command::Hist(a) => {
            let level: Level = a.level.parse()?;
            let source = if let Some(path) = a.run {
                HistSource::RunDir { path }
            } else if let Some(path) = a.triplets {
                HistSource::Triplets { path }
            } else if a.data.is_some() || a.benchmark {
                let constraint = match a.mining.parse()? {
                    MiningMode::Offline(c) => c,
                    MiningMode::OnlineHard => {
                        return Err(CliError::Usage("hist mines offline triplets only".into()))
                    }
                };
                HistSource::Mine {
                    data: a.data.map_or_else(DataSource::benchmark, |path| DataSource::Dir { path }),
                    seed: a.seed,
                    per_example: a.per_example,
                    constraint,
                }
            } else {
                return Err(CliError::Usage(
                    "hist needs one of --run, --triplets, --data or --benchmark".into(),
                ));
            };
            if a.per_example == 0 {
                return Err(CliError::Usage("--per-example must be at least 1".into()));
            }
            RunConfig::Hist(HistRun { run_id: a.run_id, out: a.out, source, level })
        }
        Command::Probe(a) => RunConfig::Probe(ProbeRun {
            run_id: a.run_id,
            out: a.out,
            checkpoint: a.checkpoint,
            data: a.data.source(),
            seed: a.seed,
            query: a.query,
            k_similar: a.k_similar,
            similar: a.similar,
        }),
        Command::Replay(a) => {
            let config = RunConfig::read(&a.config)?;
            match a.out {
                Some(out) => config.with_out(out),
                None => config,
            }
        }
    })
}

fn print(outcome: &Outcome, config: &RunConfig) {
    let dir = config.run_dir();
    match outcome {
        Outcome::Generated { items } => println!("wrote {items} items to {}", dir.display()),
        Outcome::Trained(row) => println!("{}\n{}", row.report(), dir.display()),
        Outcome::Swept(report) => {
            for s in &report.summary {
                println!(
                    "{:<12} nDCG {:5.1} ± {:.1}  mAP {:5.1} ± {:.1}  R@1 {:5.1} ± {:.1}",
                    s.setting,
                    100.0 * s.ndcg_avg_mean,
                    100.0 * s.ndcg_avg_std,
                    100.0 * s.map_avg_mean,
                    100.0 * s.map_avg_std,
                    100.0 * s.r1_avg_mean,
                    100.0 * s.r1_avg_std,
                );
            }
            println!("{}", dir.display());
        }
        Outcome::Histogram(h) => print!("{}", h.to_csv()),
        Outcome::Probed(p) => {
            let show = |m: Option<f64>| m.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            println!("s(v,q)  = {:.4}", p.groundtruth);
            println!("s(v+,q) = {} over {} items", show(p.similar.mean), p.similar.count);
            println!("s(v-,q) = {} over {} items", show(p.dissimilar.mean), p.dissimilar.count);
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve(cli.command).and_then(|config| {
        let outcome = execute(&config)?;
        print(&outcome, &config);
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
