//! `danet`: train, denoise, generate, evaluate and gradient-check from the command line.
//!
//! Any `--section.key value` flag overrides the matching key of the JSON config.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use danet_core::data::BitDepth;
use danet_core::gradcheck::Scope;

use commands::{EvalArgs, Failure, Metric};
use config::{split_overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "danet", version, about = "Dual adversarial denoising and noise generation")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Adversarial training (mode from train.mode); writes checkpoints and a CSV log.
    Train,
    /// Denoise images with a denoiser checkpoint.
    Denoise {
        #[arg(long)]
        checkpoint: PathBuf,
        /// PNG files or directories of PNGs.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 8, value_parser = parse_depth)]
        bit_depth: u8,
    },
    /// Draw noisy samples for clean images with a generator checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[arg(long, default_value_t = 8, value_parser = parse_depth)]
        bit_depth: u8,
        /// Also write unclipped samples as DTN1 tensors.
        #[arg(long)]
        raw: bool,
    },
    /// Compute a metric and write a report.
    Eval {
        #[arg(long, value_enum)]
        metric: Metric,
        /// Denoiser (psnr, ssim) or generator (akld, pgap) checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Instead of a generator: `real`, `scaled:<ratio>` or a noise-model JSON object.
        #[arg(long)]
        oracle: Option<String>,
        /// Dataset manifest; defaults to data.manifest.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Test manifest for pgap; defaults to data.validation.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Reference folder for psnr/ssim of image folders, matched by file name.
        #[arg(long, requires = "inputs")]
        reference: Option<PathBuf>,
        inputs: Vec<PathBuf>,
    },
    /// Finite-difference gradient checks in 64-bit precision.
    Gradcheck {
        #[arg(long)]
        scope: Option<Scope>,
        /// Swap a registered op for a deliberately wrong one.
        #[arg(long, hide = true)]
        inject_fault: Vec<String>,
    },
}

fn parse_depth(s: &str) -> Result<u8, String> {
    match s {
        "8" => Ok(8),
        "16" => Ok(16),
        _ => Err(format!("bit depth must be 8 or 16, got {s}")),
    }
}

fn depth(bits: u8) -> BitDepth {
    if bits == 16 {
        BitDepth::Sixteen
    } else {
        BitDepth::Eight
    }
}

fn run() -> Result<(), Failure> {
    let (args, mut overrides) = split_overrides(std::env::args().collect()).map_err(Failure::Usage)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { Err(Failure::Usage(String::new())) } else { Ok(()) };
        }
    };
    if let Some(s) = cli.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(o) = &cli.out {
        overrides.push(("out".into(), serde_json::Value::from(o.to_string_lossy()).to_string()));
    }
    if let Some(t) = cli.threads {
        overrides.push(("threads".into(), t.to_string()));
    }
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides).map_err(|e| Failure::Usage(e.to_string()))?;

    match cli.command {
        Command::Train => commands::train(&cfg),
        Command::Denoise {
            checkpoint,
            inputs,
            bit_depth,
        } => commands::denoise(&cfg, &checkpoint, &inputs, depth(bit_depth)),
        Command::Generate {
            checkpoint,
            inputs,
            samples,
            bit_depth,
            raw,
        } => commands::generate(&cfg, &checkpoint, &inputs, samples, depth(bit_depth), raw),
        Command::Eval {
            metric,
            checkpoint,
            oracle,
            dataset,
            test,
            reference,
            inputs,
        } => commands::eval(
            &cfg,
            &EvalArgs {
                metric,
                checkpoint,
                oracle,
                dataset,
                test,
                reference,
                inputs,
            },
        ),
        Command::Gradcheck { scope, inject_fault } => commands::gradcheck(cfg.seed, scope, &inject_fault),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Usage(m) | Failure::Runtime(m) => m,
            };
            if !msg.is_empty() {
                eprintln!("error: {}", msg.trim_end());
            }
            ExitCode::from(f.code() as u8)
        }
    }
}
