//! `diffvc`: feature extraction, training, conversion and evaluation.
//!
//! Exit status is 0 on success, 1 on a runtime error and 2 on a usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "diffvc", version, about = "Diffusion-based singing voice conversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute mel, F0, loudness and PPG feature files for one WAV.
    Extract(ExtractArgs),
    /// Train a denoiser on a feature corpus.
    Train(TrainArgs),
    /// Generate a mel spectrogram from conditioning features.
    Convert(ConvertArgs),
    /// Score hypothesis mels against references (MCD, FPC).
    Eval(EvalArgs),
    /// Print the noise schedule as CSV.
    Schedule(ScheduleArgs),
    /// Verify autodiff gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("ppg_source").required(true).args(["ppg", "synth_ppg"]))]
pub struct ExtractArgs {
    #[arg(long)]
    pub wav: PathBuf,
    /// Utterance directory to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Posteriorgram FEAT1 file with one row per frame.
    #[arg(long)]
    pub ppg: Option<PathBuf>,
    /// Generate a synthetic posteriorgram from this seed instead.
    #[arg(long, value_name = "SEED")]
    pub synth_ppg: Option<u64>,
    /// Additional F0 contours (FEAT1, Hz) fused with the built-in estimate.
    #[arg(long = "extra-f0", value_name = "PATH")]
    pub extra_f0: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus root with one directory per utterance.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to write (rewritten at every periodic save).
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Loss log; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub ppg: PathBuf,
    #[arg(long)]
    pub f0: PathBuf,
    #[arg(long)]
    pub loud: PathBuf,
    /// Output log-mel FEAT1 file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write a Griffin-Lim waveform.
    #[arg(long)]
    pub wav: Option<PathBuf>,
    /// Pitch shift applied to voiced frames, in semitones.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub f0_shift: f64,
    /// Feature settings used for the waveform (mel analysis parameters).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub griffin_lim_iters: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub hyp: PathBuf,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Number of diffusion steps.
    #[arg(long = "T", visible_alias = "steps", default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub beta_start: f64,
    #[arg(long, default_value_t = 0.06)]
    pub beta_end: f64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => commands::extract(&a),
        Command::Train(a) => commands::train(&a),
        Command::Convert(a) => commands::convert(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Schedule(a) => commands::schedule(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
