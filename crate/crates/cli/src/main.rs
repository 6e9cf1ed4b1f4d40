//! `mpp`: data generation, pretraining, finetuning, evaluation and the
//! transfer experiment from the command line.

mod commands;
mod report;
mod settings;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mpp_core::MppError;

use commands::{check, data, eval, train, transfer};

/// Bad input: flags, config values, missing files or unknown names.
#[derive(Debug)]
pub struct Validation(pub String);

/// A result missed the threshold it was asserted against.
#[derive(Debug)]
pub struct ThresholdFailure(pub String);

impl fmt::Display for Validation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for ThresholdFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Validation {}
impl std::error::Error for ThresholdFailure {}

#[derive(Parser, Debug)]
#[command(name = "mpp", version = report::BUILD_ID, about = "Multiple-physics pretraining of axial transformers on PDE data")]
struct Cli {
    /// Flat `section.key = value` file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a trajectory corpus.
    GenData(data::GenArgs),
    /// Pretrain on several systems at once.
    Pretrain(train::PretrainArgs),
    /// Finetune (or train from scratch) on a restricted sample of one system.
    Finetune(train::FinetuneArgs),
    /// Rollout NRMSE over a dataset split.
    Eval(eval::EvalArgs),
    /// Roll out a single trajectory.
    Rollout(eval::RolloutArgs),
    /// Pretrained-versus-scratch comparison over a sample-size grid.
    TransferExperiment(transfer::TransferArgs),
    /// Finite-difference check of every gradient.
    GradCheck(check::GradArgs),
    /// Summarise a dataset or checkpoint.
    Info(data::InfoArgs),
}

/// 0 success, 1 validation error, 2 runtime failure, 3 threshold failure.
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ThresholdFailure>().is_some() {
        return 3;
    }
    if e.downcast_ref::<Validation>().is_some() {
        return 1;
    }
    match e.downcast_ref::<MppError>() {
        Some(
            MppError::Config(_)
            | MppError::Unknown { .. }
            | MppError::Shape(_)
            | MppError::WindowRange { .. }
            | MppError::Empty(_)
            | MppError::DuplicateField(_),
        ) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::GenData(a) => data::gen_data(config, a),
        Command::Pretrain(a) => train::pretrain(config, a),
        Command::Finetune(a) => train::finetune(config, a),
        Command::Eval(a) => eval::eval(config, a),
        Command::Rollout(a) => eval::rollout(config, a),
        Command::TransferExperiment(a) => transfer::run(config, a),
        Command::GradCheck(a) => check::grad_check(config, a),
        Command::Info(a) => data::info(config, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
