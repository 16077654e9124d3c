//! `cancelauth`: enroll, verify, revoke and evaluate two-factor cancelable
//! ECG credentials.
//!
//! Exit status is 0 for success or ACCEPT, 1 for REJECT and 2 for any
//! operational error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "cancelauth",
    version,
    about = "Two-factor cancelable ECG biometric verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a deterministic synthetic corpus (signal + .rpk per subject).
    Synth(SynthArgs),
    /// Clean (and optionally decimate) one signal file.
    Preprocess(PreprocessArgs),
    /// Enroll a subject and write their key file.
    Enroll(EnrollArgs),
    /// Verify a claimed identity; prints ACCEPT or REJECT.
    Verify(VerifyArgs),
    /// Replace a subject's credential with one built from a fresh key.
    Revoke(RevokeArgs),
    /// Run the FPR/FNR/EER grid over a directory of signals.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Bio,
    Mace,
}

impl From<SchemeArg> for cancelauth::Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Bio => cancelauth::Scheme::Bioconvolving,
            SchemeArg::Mace => cancelauth::Scheme::Mace,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalSchemeArg {
    Bio,
    Mace,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackArg {
    GenuineKey,
    RandomKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    MeanSpectrum,
    AveragePower,
}

/// Signal cleaning flags shared by every command that reads ECG.
#[derive(Debug, Clone, Args)]
pub struct PreprocessFlags {
    /// Sampling rate of the input signal(s) in Hz.
    #[arg(long)]
    pub fs: f64,
    #[arg(long, default_value_t = 200.0)]
    pub median1_ms: f64,
    #[arg(long, default_value_t = 600.0)]
    pub median2_ms: f64,
    /// Power-line frequency to notch out (use 60 for 60 Hz mains).
    #[arg(long, default_value_t = 50.0)]
    pub notch_hz: f64,
    #[arg(long, default_value_t = 1.0)]
    pub notch_bw_hz: f64,
    /// Beat segment duration in seconds.
    #[arg(long, default_value_t = 0.8)]
    pub segment_s: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 30)]
    pub subjects: usize,
    #[arg(long, default_value_t = 40)]
    pub beats: usize,
    #[arg(long, default_value_t = 1000.0)]
    pub fs: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 0.05)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.02)]
    pub noise_mv: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub signal: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub downsample: usize,
    #[command(flatten)]
    pub pre: PreprocessFlags,
}

/// Where the beats for a session come from.
#[derive(Debug, Clone, Args)]
pub struct SessionArgs {
    #[arg(long)]
    pub signal: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub downsample: usize,
    /// Skip this many leading beats of the signal before taking the session.
    #[arg(long, default_value_t = 0)]
    pub offset_beats: usize,
    #[command(flatten)]
    pub pre: PreprocessFlags,
}

#[derive(Debug, Args)]
pub struct EnrollArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub id: String,
    #[arg(long, value_enum)]
    pub scheme: SchemeArg,
    #[arg(long)]
    pub key_out: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub n_en: usize,
    #[arg(long, default_value_t = 1.5)]
    pub kiqr: f64,
    #[arg(long, default_value_t = 4)]
    pub bio_k: usize,
    #[arg(long, default_value_t = 16)]
    pub mace_k: usize,
    /// Key generation seed; a random one is chosen and printed if absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub session: SessionArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub id: String,
    #[arg(long, value_enum)]
    pub scheme: SchemeArg,
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub n_v: usize,
    #[command(flatten)]
    pub session: SessionArgs,
}

pub type RevokeArgs = EnrollArgs;

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of `*.txt` signals with optional `.rpk` annotations.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalSchemeArg::Both)]
    pub scheme: EvalSchemeArg,
    #[arg(long, default_value_t = 15)]
    pub n_en: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
    pub n_v_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub downsample_list: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = AttackArg::GenuineKey)]
    pub attack: AttackArg,
    #[arg(long, value_enum, default_value_t = WeightingArg::MeanSpectrum)]
    pub weighting: WeightingArg,
    #[arg(long, default_value_t = 4)]
    pub bio_k: usize,
    #[arg(long, default_value_t = 16)]
    pub mace_k: usize,
    /// Largest k_iqr of the sweep, which starts at 0.
    #[arg(long, default_value_t = 10.0)]
    pub kiqr_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub kiqr_step: f64,
    /// Rate report; the summary goes next to it as `<stem>_summary.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one score dump per cell into this directory.
    #[arg(long)]
    pub scores_dir: Option<PathBuf>,
    #[command(flatten)]
    pub pre: PreprocessFlags,
}

pub enum Outcome {
    Success,
    Reject,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::Enroll(a) => commands::enroll(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Revoke(a) => commands::revoke(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Reject) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
