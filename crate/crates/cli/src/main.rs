#![allow(clippy::neg_cmp_op_on_partial_ord)]
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::json;

use interpolab_core::rng::Seed;
use interpolab_core::LabError;

mod args;
mod commands;
mod output;

use args::{Cli, Format};
use output::{digest, to_json, RunReport};

const EXIT_PASS: u8 = 0;
const EXIT_VIOLATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code_of(e: &LabError) -> u8 {
    match e {
        LabError::DegenerateWitness { .. } => EXIT_VIOLATION,
        LabError::NonConvergent { .. } | LabError::InsufficientData(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS });
        }
    };
    let started = Instant::now();
    let outcome = match commands::run(&cli.command, Seed::new(cli.seed)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("interpolab: {e}");
            return ExitCode::from(exit_code_of(&e));
        }
    };
    let csv = outcome.force_csv
        || match cli.format {
            Some(f) => f == Format::Csv,
            None => cli.out.as_deref().is_some_and(|p| p.to_ascii_lowercase().ends_with(".csv")),
        };
    let text = if csv {
        outcome.table.render()
    } else {
        let config = json!({ "seed": cli.seed, "command": &cli.command });
        let report = RunReport {
            version: env!("CARGO_PKG_VERSION"),
            command: std::env::args().skip(1).collect(),
            seed: cli.seed,
            config_digest: digest(&config),
            config,
            passed: outcome.passed,
            payload: outcome.payload,
            wall_time_seconds: cli.timing.then(|| started.elapsed().as_secs_f64()),
        };
        let mut s = to_json(&report);
        s.push('\n');
        s
    };
    match &cli.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                eprintln!("interpolab: cannot write {path}: {e}");
                return ExitCode::from(EXIT_USAGE);
            }
        }
        None => print!("{text}"),
    }
    ExitCode::from(if outcome.passed { EXIT_PASS } else { EXIT_VIOLATION })
}
