//! `asc`: acoustic scene classification toolkit.
//!
//! Subcommands cover the full pipeline: feature extraction, synthetic
//! benchmark generation, training, evaluation, pruning, quantization,
//! distillation, model packing, and artifact inspection. Every run is a
//! pure function of (inputs, config, seed) and writes a manifest next to
//! its outputs recording the fully resolved configuration.

mod commands;
mod config;
mod dataset;
mod fail;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::fail::Fail;

#[derive(Parser)]
#[command(
    name = "asc",
    version,
    about = "Low-complexity acoustic scene classification toolkit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<Config, Fail> {
        Config::load(self.config.as_deref(), &self.set, self.seed)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Convert WAV clips (listed in meta.csv) into log-mel feature caches.
    Features {
        /// Directory with meta.csv and the audio it names (or ASC_DATA_ROOT).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate the synthetic device-shift benchmark.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on <data>/train.csv.
    Train {
        /// Directory with train.csv (or ASC_DATA_ROOT).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a model on a metadata table.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Metadata table inside the data directory.
        #[arg(long, default_value = "test.csv")]
        csv: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Magnitude-prune a checkpoint.
    Prune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Quantize-dequantize a checkpoint's conv weights.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Distill a student from a teacher, then prune, fine-tune, and pack it.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Pack a checkpoint into the deployable container, or size a counts manifest.
    Pack {
        #[arg(long)]
        model: Option<PathBuf>,
        /// `name encoding values` lines; sizes an ensemble without weights.
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Inspect a checkpoint or packed model.
    Info {
        #[arg(long)]
        model: PathBuf,
        /// Emit one JSON object instead of the table.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cmd: Cmd) -> Result<(), Fail> {
    match cmd {
        Cmd::Features { input, out, common } => {
            commands::cmd_features(input, &out, common.load()?)
        }
        Cmd::SynthData { out, common } => commands::cmd_synth_data(&out, common.load()?),
        Cmd::Train { data, out, common } => commands::cmd_train(data, &out, common.load()?),
        Cmd::Eval {
            model,
            data,
            csv,
            out,
            common,
        } => commands::cmd_eval(&model, data, &csv, &out, common.load()?),
        Cmd::Prune { model, out, common } => commands::cmd_prune(&model, &out, common.load()?),
        Cmd::Quantize { model, out, common } => {
            commands::cmd_quantize(&model, &out, common.load()?)
        }
        Cmd::Distill {
            teacher,
            data,
            out,
            common,
        } => commands::cmd_distill(&teacher, data, &out, common.load()?),
        Cmd::Pack {
            model,
            counts,
            out,
            common,
        } => commands::cmd_pack(model, counts, &out, common.load()?),
        Cmd::Info {
            model,
            json,
            common,
        } => commands::cmd_info(&model, json, common.load()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not failures; usage mistakes are
            // validation errors (clap's default exit 2 means "partial data
            // failure" here).
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => fail::EXIT_VALIDATION,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
