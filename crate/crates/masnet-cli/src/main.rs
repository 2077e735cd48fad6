//! Command-line frontend: WAV enhancement, desk-scale training, analytical
//! cost reports, SNR evaluation and batch/stream parity checks.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

mod commands;
mod config;
mod wav;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<masnet::Error> for CliError {
    fn from(e: masnet::Error) -> Self {
        match e {
            masnet::Error::TrainingDiverged(_) => CliError::numeric(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "masnet",
    version,
    about = "Streaming speech enhancement with causal convolutional ratio-mask networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Denoise a 16 kHz mono PCM16 WAV file.
    ///
    /// Stream mode pushes one spectrogram frame at a time through cached
    /// per-layer state: it buffers one hop (128 samples) of input and emits
    /// audio with one window (256 samples) of algorithmic latency. Batch
    /// and stream modes produce byte-identical output files.
    Enhance {
        /// Input WAV (PCM16 mono 16 kHz)
        #[arg(long)]
        input: PathBuf,
        /// Output WAV path
        #[arg(long)]
        output: PathBuf,
        /// Checkpoint file with weights
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Model name; with --weights it must match the checkpoint, without
        /// --weights a deterministic random-weight network is used
        #[arg(long)]
        model: Option<String>,
        /// Inference mode: batch or stream
        #[arg(long, default_value = "batch")]
        mode: String,
        /// STFT window size (hop is window/2); desk-scale checkpoints may
        /// use smaller windows than the standard 256
        #[arg(long, default_value_t = masnet::dsp::WINDOW)]
        window: usize,
    },
    /// Train a network from a sectioned key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Analytical fused multiply-accumulate report for a model.
    Cost {
        /// Model name (e.g. masnet-16, llasnet-8, tiny-masnet-8x6)
        #[arg(long)]
        model: String,
        /// Spectrogram frames per second
        #[arg(long, default_value_t = masnet::cost::DEFAULT_FRAME_RATE_HZ)]
        frame_rate: f64,
        /// Frequency bin count
        #[arg(long, default_value_t = masnet::cost::DEFAULT_FREQ_BINS)]
        bins: usize,
        /// Emit the machine-readable key=value document instead of the table
        #[arg(long)]
        kv: bool,
    },
    /// Per-file and mean SNR of enhanced WAVs against clean references.
    Eval {
        /// Directory of clean reference WAVs
        #[arg(long)]
        clean: PathBuf,
        /// Directory of enhanced WAVs with matching file stems
        #[arg(long)]
        enhanced: PathBuf,
    },
    /// Random-weight batch-vs-stream parity and FMA equality check.
    Parity {
        #[arg(long)]
        model: String,
        /// Number of random input frames
        #[arg(long, default_value_t = 64)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scale hidden channel width (registry models only)
        #[arg(long)]
        width: Option<usize>,
        /// Frequency bin count of the random input
        #[arg(long, default_value_t = masnet::cost::DEFAULT_FREQ_BINS)]
        bins: usize,
        /// Deliberately corrupt a ring buffer (negative control)
        #[arg(long, hide = true)]
        corrupt_ring_buffer: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Enhance {
            input,
            output,
            weights,
            model,
            mode,
            window,
        } => commands::enhance(&input, &output, weights.as_deref(), model.as_deref(), &mode, window),
        Command::Train { config } => commands::train(&config),
        Command::Cost {
            model,
            frame_rate,
            bins,
            kv,
        } => commands::cost(&model, frame_rate, bins, kv),
        Command::Eval { clean, enhanced } => commands::eval(&clean, &enhanced),
        Command::Parity {
            model,
            frames,
            seed,
            width,
            bins,
            corrupt_ring_buffer,
        } => commands::parity(&model, frames, seed, width, bins, corrupt_ring_buffer),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
