//! `mcsd`: train residual MLPs with stochastic depth and run the
//! calibration, domain-shift and verification studies on them.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcsd_core::Regime;

#[derive(Parser, Debug)]
#[command(name = "mcsd", version, about = "Monte Carlo stochastic depth experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network and write checkpoint.json and report.json.
    Train(TrainArgs),
    /// Calibration metrics and a reliability table for a labelled CSV.
    Eval(EvalArgs),
    /// Entropy CDFs for in-distribution versus shifted data.
    Ood(OodArgs),
    /// Calibrate a threshold on impostors, then sweep morph blends.
    Verify(VerifyArgs),
    /// Generate synthetic datasets as CSV.
    GenData(GenDataArgs),
    /// Compare the analytic objective gradient with central differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for output artifacts.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Monte Carlo settings shared by eval, ood and verify.
#[derive(Args, Debug, Default)]
pub struct McFlags {
    /// Stochastic forward passes (default 50).
    #[arg(short = 'T', long)]
    pub passes: Option<usize>,
    /// DET, MCDO or MCSD (default: the regime the checkpoint was trained with).
    #[arg(long)]
    pub regime: Option<Regime>,
    /// Final-block survival probability for MCSD.
    #[arg(long)]
    pub q_final: Option<f64>,
    /// Unit dropout rate for MCDO.
    #[arg(long)]
    pub dropout_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub regime: Option<Regime>,
    /// Stream one JSON line per epoch to stdout.
    #[arg(long)]
    pub progress: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Labelled CSV to evaluate.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Confidence bins for ECE (default 10).
    #[arg(long)]
    pub bins: Option<usize>,
    #[command(flatten)]
    pub mc: McFlags,
}

#[derive(Args, Debug)]
pub struct OodArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// In-distribution CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Out-of-distribution CSV.
    #[arg(long)]
    pub ood_data: Option<PathBuf>,
    #[command(flatten)]
    pub mc: McFlags,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Draw impostor and mirror pairs from a synthetic identity world.
    #[arg(long)]
    pub synthetic: bool,
    /// Morph pairs CSV with columns a0.., b0..
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Impostor pairs CSV used to calibrate the threshold.
    #[arg(long)]
    pub impostors: Option<PathBuf>,
    /// Comma-separated blending factors.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Target false acceptance rate (default 0.001).
    #[arg(long)]
    pub far: Option<f64>,
    #[command(flatten)]
    pub mc: McFlags,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ood(a) => commands::ood(a),
        Command::Verify(a) => commands::verify(a),
        Command::GenData(a) => commands::gen_data(a),
        Command::GradCheck(a) => commands::grad_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
