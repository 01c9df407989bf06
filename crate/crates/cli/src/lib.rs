//! Command-line driver: `prepare`, `train`, `eval`, `analyze` and `export`
//! over a declarative TOML experiment file.

pub mod commands;
pub mod config;
pub mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use proxyrca::eval::Split;

pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "proxyrca", version, about = "Proxy-based item representation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Preprocess the configured data and write the dataset artifact.
    Prepare(Common),
    /// Train with early stopping and write the best checkpoint.
    Train(Common),
    /// Evaluate the trained checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Frequency groups, memorization probe, removal and growth experiments.
    Analyze(Common),
    /// Proxy weights, PIR vectors and a PCA of item vectors.
    Export(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config file.
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `section.key=value`; applied after the file, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    /// Number of frequent items with a learned bias.
    #[arg(long = "K")]
    pub k: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EncoderArg {
    FullTable,
    Unknown,
    Pir,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Valid,
    Test,
    TrainTarget,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
            SplitArg::TrainTarget => Split::TrainTarget,
        }
    }
}

impl Common {
    /// Loads the file, then `--override`s, then the dedicated flags.
    pub fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(e) = self.encoder {
            let name = match e {
                EncoderArg::FullTable => "full_table",
                EncoderArg::Unknown => "unknown",
                EncoderArg::Pir => "pir",
            };
            overrides.push(format!("model.encoder=\"{name}\""));
        }
        if let Some(k) = self.k {
            overrides.push(format!("model.k_frequent={k}"));
        }
        ExperimentConfig::load(&self.config, &overrides)
    }
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Prepare(c) => {
            let stats = commands::prepare(&c.load()?)?;
            emit(&serde_json::to_string_pretty(&stats).expect("stats serialize"))?;
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            let out = commands::train(&cfg)?;
            let h = &out.history;
            emit(&format!(
                "trained {} epochs, best epoch {:?} with valid NDCG {:?}, {} parameters",
                h.epochs.len(),
                h.best_epoch,
                h.best_ndcg,
                out.param_count
            ))?;
        }
        Command::Eval { common, split } => {
            let report = commands::eval(&common.load()?, (*split).into())?;
            emit(&serde_json::to_string_pretty(&report).expect("report serializes"))?;
        }
        Command::Analyze(c) => {
            for p in commands::analyze(&c.load()?)? {
                emit(&p.display().to_string())?;
            }
        }
        Command::Export(c) => {
            for p in commands::export(&c.load()?)? {
                emit(&p.display().to_string())?;
            }
        }
    }
    Ok(())
}
