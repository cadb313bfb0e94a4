//! `wstan`: weakly supervised temporal grounding on synthetic corpora.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 input data
//! error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wstan_cli::commands;
use wstan_cli::config::{ConfigArgs, RunConfig};
use wstan_cli::exit_code_for;
use wstan_core::error::{Error, Result};

#[derive(Parser)]
#[command(name = "wstan", about = "Weakly supervised temporal grounding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus into an existing directory.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for train.jsonl, test.jsonl, fingerprint.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint, vocabulary, and CSV log.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Corpus directory produced by gen-data.
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        ckpt_out: PathBuf,
        /// Training log path (default: checkpoint path with .log.csv).
        #[arg(long)]
        log_out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (or the random baseline) on the test split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint to evaluate; omit with --random-baseline.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Corpus directory produced by gen-data.
        #[arg(long)]
        corpus: PathBuf,
        /// Directory for metrics.csv, metrics.json, predictions.jsonl.
        #[arg(long)]
        out_dir: PathBuf,
        /// Worker threads for the query fan-out; never changes results.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Score uniformly at random instead of loading a checkpoint,
        /// averaged over fixed Monte Carlo seeds.
        #[arg(long)]
        random_baseline: bool,
        /// Vocabulary path (default: checkpoint path with .vocab).
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Ground one sentence in one video file.
    Infer {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        /// JSON Lines episode file; the first episode is used.
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        sentence: String,
        /// Write the score map as a plain-text PGM image.
        #[arg(long)]
        heatmap: Option<PathBuf>,
        /// Vocabulary path (default: checkpoint path with .vocab).
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Run the gradient verification suite.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Append a deliberately broken check (testing hook).
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Print every config key with its default value.
    Defaults,
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData { cfg, out } => {
            commands::gen_data::run(&RunConfig::resolve(&cfg)?, &out)?;
        }
        Command::Train { cfg, corpus, ckpt_out, log_out } => {
            commands::train::run(&RunConfig::resolve(&cfg)?, &corpus, &ckpt_out, log_out.as_deref())?;
        }
        Command::Eval { cfg, ckpt, corpus, out_dir, workers, random_baseline, vocab } => {
            let cfg = RunConfig::resolve(&cfg)?;
            if random_baseline {
                commands::eval::run_random_baseline(&cfg, &corpus, &out_dir, workers)?;
            } else {
                let ckpt = ckpt.ok_or_else(|| {
                    Error::Config("eval needs --ckpt unless --random-baseline is set".into())
                })?;
                commands::eval::run(&cfg, &ckpt, &corpus, &out_dir, workers, vocab.as_deref())?;
            }
        }
        Command::Infer { cfg, ckpt, video, sentence, heatmap, vocab } => {
            commands::infer::run(
                &RunConfig::resolve(&cfg)?,
                &ckpt,
                &video,
                &sentence,
                heatmap.as_deref(),
                vocab.as_deref(),
            )?;
        }
        Command::Gradcheck { cfg, inject_fault } => {
            let all_pass = commands::gradcheck::run(&RunConfig::resolve(&cfg)?, inject_fault)?;
            if !all_pass {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Defaults => {
            for (key, value) in RunConfig::default().canonical_pairs() {
                println!("{key}={value}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // Die quietly on closed pipes (`wstan defaults | head`) instead of
    // panicking mid-print, matching ordinary Unix tool behavior.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; real parse errors
            // are usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
