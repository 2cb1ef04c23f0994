//! `treenlg`: the data pipeline from raw files to evaluation tables.
//!
//! Every subcommand writes its artifacts plus `<out>.provenance.json`.
//! Failures are reported as one JSON object on stderr with a nonzero exit.

mod commands;
mod common;
mod eval;
mod import;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::common::CliError;

#[derive(Debug, Parser)]
#[command(name = "treenlg", version, about = "Bucketing, curation, augmentation and evaluation for tree-structured NLG data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a delimited raw file into validated JSONL.
    Import(import::ImportArgs),
    /// Validate a JSONL dataset and check serialization round trips.
    Parse(commands::ParseArgs),
    /// Assign bucket keys at one or more granularities.
    Bucket(commands::BucketArgs),
    /// Draw a bucket-stratified sample, e.g. `--plan 1PerFB`.
    Sample(commands::SampleArgs),
    /// Concatenate per-domain datasets with namespaced ids.
    Merge(commands::MergeArgs),
    /// Emit epoch-wise relexicalized training instances.
    Augment(commands::AugmentArgs),
    /// Keep the first ranked candidate that passes the tree check.
    KdFilter(commands::KdFilterArgs),
    /// Tree accuracy and BLEU of candidate files against a test set.
    Eval(eval::EvalArgs),
    /// Pick the most differentiating test examples, one per FB bucket.
    SelectEvalSet(eval::SelectArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Import(a) => import::run(a),
        Command::Parse(a) => commands::parse_cmd(a),
        Command::Bucket(a) => commands::bucket_cmd(a),
        Command::Sample(a) => commands::sample_cmd(a),
        Command::Merge(a) => commands::merge_cmd(a),
        Command::Augment(a) => commands::augment_cmd(a),
        Command::KdFilter(a) => commands::kd_filter_cmd(a),
        Command::Eval(a) => eval::eval_cmd(a),
        Command::SelectEvalSet(a) => eval::select_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let cli_err = match err.downcast::<CliError>() {
                Ok(e) => e,
                Err(other) => CliError::new("internal", format!("{other:#}")),
            };
            eprintln!("{}", cli_err.to_json());
            ExitCode::from(cli_err.exit_code as u8)
        }
    }
}
