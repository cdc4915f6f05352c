use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use convoscan::pipeline::{self, PipelineConfig};
use convoscan::Error;

/// Chat-log triage: language model, conversation classifier and author scoring.
#[derive(Parser, Debug)]
#[command(name = "convoscan", version, about)]
struct Cli {
    /// TOML configuration file; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Disable LSTM biases and padding masks.
    #[arg(long, global = true)]
    strict_paper: bool,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Normalize, label and filter the raw corpora.
    Preprocess,
    /// Build the TF-IDF ordered vocabulary.
    BuildVocab,
    /// Train the language model.
    TrainLm,
    /// Test-set perplexity of the language model.
    EvalLm,
    /// Turn every message into a sentence vector.
    Vectorize,
    /// Train the conversation classifier.
    TrainScd,
    /// Classify test conversations.
    EvalScd,
    /// Train the author classifier.
    TrainAuthor,
    /// Score every test author.
    ScoreAuthors,
    /// Combine conversation verdicts and author scores.
    Identify,
    /// Run every stage in order.
    Pipeline,
    /// Generate synthetic train and test corpora.
    Synth,
    /// Print the effective configuration.
    ShowConfig,
}

impl Command {
    fn stage_name(self) -> Option<&'static str> {
        Some(match self {
            Self::Preprocess => "preprocess",
            Self::BuildVocab => "build-vocab",
            Self::TrainLm => "train-lm",
            Self::EvalLm => "eval-lm",
            Self::Vectorize => "vectorize",
            Self::TrainScd => "train-scd",
            Self::EvalScd => "eval-scd",
            Self::TrainAuthor => "train-author",
            Self::ScoreAuthors => "score-authors",
            Self::Identify => "identify",
            _ => return None,
        })
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.paths.out_dir = o.clone();
    }
    if cli.strict_paper {
        cfg.apply_strict_paper();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String, Error> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Pipeline => pipeline::run_pipeline(&cfg),
        Command::Synth => pipeline::synth(&cfg),
        Command::ShowConfig => Ok(cfg.to_toml()),
        other => {
            let name = other.stage_name().expect("every other command is a stage");
            let (_, stage) = pipeline::STAGES
                .iter()
                .find(|(n, _)| *n == name)
                .expect("stage table covers every stage command");
            stage(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
