//! `toflow`: toy corpus generation, training, inference and evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{CliError, RunConfig, ToyKind};
use toflow::data::DegradationSpec;
use toflow::heads::Task;

#[derive(Debug, Parser)]
#[command(name = "toflow", version, about = "Task-oriented flow for video enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus under `<out>/<split>`.
    GenToy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, value_enum)]
        kind: Option<ToyKind>,
    },
    /// Degrade every clip of a corpus split.
    Degrade {
        #[command(flatten)]
        common: Common,
        /// Degradation with default strength; overrides the config's.
        #[arg(long, value_enum)]
        kind: Option<DegradeKind>,
    },
    /// Apply the benchmark selection rules to a corpus.
    Filter(Common),
    /// Supervised flow pretraining.
    PretrainFlow(Common),
    /// Supervised mask pretraining on top of a flow checkpoint.
    PretrainMask(Common),
    /// Joint training on the task loss.
    Train(Common),
    /// Write the model output of every clip as PNG.
    Infer(Common),
    /// Per-clip PSNR and SSIM of a checkpoint on a corpus.
    Eval(Common),
    /// Flow magnitude histograms of a corpus.
    FlowStats(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Corpus root.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DegradeKind {
    Gaussian,
    Mixed,
    Blocky,
    Downsample,
}

impl DegradeKind {
    fn spec(self) -> DegradationSpec {
        match self {
            DegradeKind::Gaussian => DegradationSpec::gaussian(),
            DegradeKind::Mixed => DegradationSpec::mixed(),
            DegradeKind::Blocky => DegradationSpec::Blocky { q: 1.0 },
            DegradeKind::Downsample => DegradationSpec::downsample(),
        }
    }
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(t) = self.task {
            cfg.model.task = t;
        }
        if let Some(s) = self.seed {
            cfg.model.seed = s;
        }
        if let Some(c) = &self.checkpoint {
            cfg.checkpoint = Some(c.clone());
        }
        if let Some(i) = &self.input {
            cfg.corpus = Some(i.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    use commands::*;
    match cli.command {
        Command::GenToy { common, count, kind } => {
            let mut cfg = common.resolve()?;
            if let Some(c) = count {
                cfg.toy.count = c;
            }
            if kind.is_some() {
                cfg.toy.kind = kind;
            }
            gen_toy(&cfg)
        }
        Command::Degrade { common, kind } => {
            let mut cfg = common.resolve()?;
            if let Some(k) = kind {
                cfg.degradation = Some(k.spec());
            }
            degrade(&cfg)
        }
        Command::Filter(c) => filter(&c.resolve()?),
        Command::PretrainFlow(c) => pretrain_flow(&c.resolve()?),
        Command::PretrainMask(c) => pretrain_mask(&c.resolve()?),
        Command::Train(c) => train(&c.resolve()?),
        Command::Infer(c) => infer(&c.resolve()?, c.task),
        Command::Eval(c) => eval(&c.resolve()?, c.task),
        Command::FlowStats(c) => flow_stats(&c.resolve()?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
