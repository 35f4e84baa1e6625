//! `ptxt` — caption collection, prompt training, and evaluation from the
//! command line.
//!
//! Exit codes: 0 on success, 1 on validation errors (bad flags, missing or
//! malformed inputs), 2 on runtime errors.

mod commands;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::util::CliError;

#[derive(Parser)]
#[command(name = "ptxt", version, about = "Multi-grained prompt tuning from captions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Coarse,
    Fine,
    Ensemble,
    #[value(name = "zero_shot")]
    ZeroShot,
}

#[derive(Subcommand)]
enum Command {
    /// Build a labeled caption corpus from raw text and a synonym dict.
    Collect {
        /// Raw captions, one per line.
        #[arg(long)]
        raw: PathBuf,
        /// JSON object {class_name: [synonym, ...]}; order defines labels.
        #[arg(long)]
        synonyms: PathBuf,
        /// Training config (provides captions per class and task kind).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output corpus (JSON Lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train prompt tokens on a caption corpus.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        /// Output checkpoint (bank.ptxt).
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss report; defaults to `<out>.report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a trained bank on a corpus or a feature file.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bank: PathBuf,
        /// Caption corpus to evaluate (alternative: --features).
        #[arg(long, conflicts_with = "features")]
        corpus: Option<PathBuf>,
        /// Precomputed clip/frame features (JSON Lines).
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "ensemble")]
        mode: ModeArg,
        /// Zero-shot template; required when --mode zero_shot.
        #[arg(long)]
        template: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV dump of the score matrix (corpus mode only).
        #[arg(long)]
        scores_out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Apply a source-trained bank to a target corpus without retraining.
    Transfer {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bank: PathBuf,
        /// Target corpus; classes may be entirely unseen.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "ensemble")]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Zero-shot evaluation from a hand-written template; no bank needed.
    ZeroShot {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Template containing the [CLASS] placeholder.
        #[arg(long)]
        template: String,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and evaluate one bank per prompt length.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training corpus.
        #[arg(long)]
        corpus: PathBuf,
        /// Corpus to evaluate each bank on; defaults to the training corpus.
        #[arg(long)]
        eval_corpus: Option<PathBuf>,
        /// Comma-separated prompt lengths, e.g. `1,4,16`.
        #[arg(long)]
        lengths: String,
        #[arg(long, value_enum, default_value = "ensemble")]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{err}");
            return ExitCode::from(1);
        }
    };

    let result = match cli.command {
        Command::Collect {
            raw,
            synonyms,
            config,
            out,
        } => commands::collect(&raw, &synonyms, config.as_deref(), &out),
        Command::Train {
            config,
            corpus,
            out,
            report,
            seed,
        } => commands::train(config.as_deref(), &corpus, &out, report.as_deref(), seed),
        Command::Eval {
            config,
            bank,
            corpus,
            features,
            mode,
            template,
            out,
            scores_out,
            seed,
        } => commands::eval(
            config.as_deref(),
            &bank,
            corpus.as_deref(),
            features.as_deref(),
            mode,
            template.as_deref(),
            &out,
            scores_out.as_deref(),
            seed,
        ),
        Command::Transfer {
            config,
            bank,
            corpus,
            mode,
            out,
            seed,
        } => commands::transfer(config.as_deref(), &bank, &corpus, mode, &out, seed),
        Command::ZeroShot {
            config,
            template,
            corpus,
            out,
            seed,
        } => commands::zero_shot(config.as_deref(), &template, &corpus, &out, seed),
        Command::Sweep {
            config,
            corpus,
            eval_corpus,
            lengths,
            mode,
            out,
            seed,
        } => commands::sweep(
            config.as_deref(),
            &corpus,
            eval_corpus.as_deref(),
            &lengths,
            mode,
            &out,
            seed,
        ),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
