//! `quaver`: end-to-end driver for the precision-robustness experiments.
//!
//! Seven subcommands cover the pipeline: synthesize a corpus, train the
//! toy transcriber, sweep benign accuracy across inference precisions,
//! craft targeted adversarial audio, sweep its robustness, fit the
//! transcript-diversity detector, and score detection quality. Reports
//! are CSVs whose rows carry the config hash and seed, so every number
//! is reproducible from the command line alone.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use quaver_core::attacks::AttackKind;
use quaver_core::PrecisionMode;

use config::ExperimentConfig;

/// Command failure with the exit code it maps to: 1 for usage and
/// configuration problems, 2 for runtime and numerical ones.
#[derive(Debug)]
pub struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    pub fn usage(message: String) -> Self {
        CliError { message, code: 1 }
    }

    pub fn runtime(message: String) -> Self {
        CliError { message, code: 2 }
    }
}

impl From<quaver_core::Error> for CliError {
    fn from(e: quaver_core::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AttackArg {
    /// Norm-bounded targeted attack at one precision.
    Cw,
    /// Masking-threshold refinement of the plain attack.
    Psycho,
    /// Precision-averaged attack against the whole emulated set.
    Adaptive,
}

impl AttackArg {
    fn kind(self) -> AttackKind {
        match self {
            AttackArg::Cw => AttackKind::Cw,
            AttackArg::Psycho => AttackKind::Psychoacoustic,
            AttackArg::Adaptive => AttackKind::AdaptiveCw,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecisionArg {
    Fp32,
    Fp16,
    Bf16,
}

impl PrecisionArg {
    fn mode(self) -> PrecisionMode {
        match self {
            PrecisionArg::Fp32 => PrecisionMode::Fp32,
            PrecisionArg::Fp16 => PrecisionMode::Fp16,
            PrecisionArg::Bf16 => PrecisionMode::Bf16,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "quaver",
    version,
    about = "Precision-robustness experiments for a toy audio transcriber"
)]
struct Cli {
    /// Experiment configuration (JSON); defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Directory that relative config paths resolve against.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize the toy corpus and its manifest.
    GenData,
    /// Train the transcriber and write its weights.
    Train,
    /// Benign WER/SER per inference precision on both test splits.
    EvalBenign,
    /// Craft targeted adversarial audio for the attack sample set.
    Attack {
        /// Which attack to run.
        #[arg(long, value_enum, default_value = "cw")]
        attack: AttackArg,
        /// Source precision the attack optimizes against (ignored by
        /// the adaptive attack, which targets all precisions).
        #[arg(long, value_enum, default_value = "fp32")]
        precision: PrecisionArg,
    },
    /// WER/SER against the attack targets per inference precision.
    EvalRobust {
        /// Which attack's records to evaluate.
        #[arg(long, value_enum, default_value = "cw")]
        attack: AttackArg,
    },
    /// Fit the benign diversity-score Gaussian.
    FitDetector,
    /// AUROC of the diversity score on disjoint evaluation sets.
    Detect,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), cli.out.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Train => commands::train(&cfg),
        Command::EvalBenign => commands::eval_benign(&cfg),
        Command::Attack { attack, precision } => {
            commands::attack(&cfg, attack.kind(), precision.mode())
        }
        Command::EvalRobust { attack } => commands::eval_robust(&cfg, attack.kind()),
        Command::FitDetector => commands::fit_detector(&cfg),
        Command::Detect => commands::detect(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
