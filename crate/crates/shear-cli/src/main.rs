//! `shear`: batch front end for span-level credit assignment.
//!
//! Subcommands weight a rollout corpus, generate synthetic corpora with
//! ground-truth labels, verify separation/concentration bands, and render
//! span-distance heatmaps. Every command is deterministic given (inputs,
//! config, seed), never mutates its inputs, and writes a run manifest
//! beside its outputs.
//!
//! Exit codes: 0 success, 2 input validation, 3 numerical failure,
//! 4 I/O, 5 verification band failure.

mod args;
mod config;
mod heatmap;
mod manifest;
mod simulate;
mod verify;
mod weight;

use clap::Parser;
use shear::ShearError;

fn main() {
    let cli = args::Cli::parse();
    let outcome = match &cli.command {
        args::Command::Weight(a) => weight::run(a),
        args::Command::Simulate(a) => simulate::run(a),
        args::Command::Verify(a) => verify::run(a),
        args::Command::Heatmap(a) => heatmap::run(a),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code(&err));
        }
    }
}

/// Maps error classes onto the documented exit codes. Everything that is
/// not an I/O or numerical failure is an input/configuration problem.
fn exit_code(err: &ShearError) -> i32 {
    match err {
        ShearError::Io { .. } => 4,
        ShearError::Numerical(_) => 3,
        _ => 2,
    }
}
