//! `imagevec`: generate corpora, filter, train, evaluate and gradient-check.

mod commands;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EvalArgs, FilterArgs, GenSynthArgs, GradCheckArgs, TrainArgs};

/// Exit codes: 0 success, 1 usage/config, 2 data error, 3 check failure.
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "imagevec", version, about = "Multilingual word embeddings from query-image data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multilingual corpus (triples, features, lexicon)
    Gensynth(GenSynthArgs),
    /// Keep only triples whose image occurs with at least two languages
    Filter(FilterArgs),
    /// Train embeddings and export them in word2vec text format
    Train(TrainArgs),
    /// Score exported embeddings on similarity, retrieval and classification tasks
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences
    Gradcheck(GradCheckArgs),
}

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_USAGE,
            error: error.into(),
        }
    }

    pub fn data(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_DATA,
            error: error.into(),
        }
    }

    pub fn check(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_CHECK,
            error: error.into(),
        }
    }
}

impl From<imagevec::Error> for Failure {
    fn from(e: imagevec::Error) -> Self {
        match e {
            imagevec::Error::Config(_) => Failure::usage(e),
            _ => Failure::data(e),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };

    let result = match cli.command {
        Command::Gensynth(a) => commands::gensynth(a),
        Command::Filter(a) => commands::filter(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
