//! `tablagen`: preprocessing, training, generation, inversion and gradient
//! verification from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::keys_help;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tablagen::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Core(tablagen::Error::NumericAbort { .. }) => 3,
            CliError::Core(_) | CliError::Usage(_) => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "tablagen", version, about = "Symbolic and audio music generation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// key=value config file [default: $TABLAGEN_CONFIG]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Log-mel features and normalisation statistics for a directory of WAV files
    #[command(after_help = keys_help())]
    PreprocessAudio(commands::PreprocessAudio),
    /// Token corpus and vocabulary for a directory of MIDI files
    #[command(after_help = keys_help())]
    PreprocessMidi(commands::PreprocessMidi),
    /// Train a model and write a checkpoint plus a metrics CSV
    #[command(after_help = keys_help())]
    Train(commands::Train),
    /// Loss and metric of a checkpoint on a corpus
    #[command(after_help = keys_help())]
    Evaluate(commands::Evaluate),
    /// Continue a seed window and write MIDI or WAV
    #[command(after_help = keys_help())]
    Generate(commands::Generate),
    /// Feature cache back to a waveform
    #[command(after_help = keys_help())]
    Invert(commands::Invert),
    /// Finite-difference check of every layer and micro model
    #[command(after_help = keys_help())]
    Gradcheck(commands::Gradcheck),
    /// Print the resolved configuration
    #[command(after_help = keys_help())]
    ShowConfig(ConfigArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PreprocessAudio(c) => c.run(),
        Command::PreprocessMidi(c) => c.run(),
        Command::Train(c) => c.run(),
        Command::Evaluate(c) => c.run(),
        Command::Generate(c) => c.run(),
        Command::Invert(c) => c.run(),
        Command::Gradcheck(c) => c.run(),
        Command::ShowConfig(c) => commands::show_config(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
