//! `svlr`: generate synthetic corpora, train arms, evaluate checkpoints and
//! dump probes. Exit status is 0 on success, 1 when a command fails its
//! contract and 2 on a usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "svlr", version, about = "Shared vision-language representation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScorerArg {
    /// Pick from the checkpoint's arm.
    Auto,
    Full,
    ZeroShot,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a corpus from a world spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the configured arm for every seed in the config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy tables, attention sweep and (with --baseline) the transfer grid.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Genome-only checkpoint the transfer grid is measured against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "auto")]
        scorer: ScorerArg,
        /// QA-frequency bin edges of the transfer grid.
        #[arg(long, value_delimiter = ',', default_value = "50")]
        qa_edges: Vec<usize>,
        /// Recognition-frequency bin edges of the transfer grid.
        #[arg(long, value_delimiter = ',', default_value = "50")]
        recognition_edges: Vec<usize>,
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "-1,-0.8,-0.6,-0.4,-0.2,0,0.2,0.4,0.6,0.8,1"
        )]
        thresholds: Vec<f64>,
    },
    /// VQA accuracy of the localization-only scorer.
    Zeroshot {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Nearest vocabulary neighbors in base-vector and learned space.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus supplying the vocabulary base vectors.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        words: Vec<String>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth { spec, out } => commands::synth(&spec, &out),
        Command::Train { config, corpus, out } => commands::train(&config, &corpus, &out),
        Command::Eval {
            checkpoint,
            corpus,
            report,
            baseline,
            scorer,
            qa_edges,
            recognition_edges,
            thresholds,
        } => commands::eval(&commands::EvalArgs {
            checkpoint,
            corpus,
            report,
            baseline,
            scorer,
            qa_edges,
            recognition_edges,
            thresholds,
        }),
        Command::Zeroshot { checkpoint, corpus, report } => {
            commands::zeroshot(&checkpoint, &corpus, report.as_deref())
        }
        Command::Probe { checkpoint, corpus, words, k, report } => {
            commands::probe(&checkpoint, &corpus, &words, k, report.as_deref())
        }
        Command::Gradcheck { seed } => commands::gradcheck(seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
