//! `srlite`: train, run, evaluate and analyze lightweight Swin
//! super-resolution models.

use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use srlite_core::complexity::{analyze_mswinsr, analyze_ugswinsr};
use srlite_core::train::Checkpoint;
use srlite_core::workflow::{degrade_dir, evaluate_dir, format_eval_table, run_training, upscale_file, AnyModel};
use srlite_core::{Error, ModelKind, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// Train the configured model; writes checkpoints and CSV logs to the output directory
    Train,
    /// Upscale one image with a trained checkpoint
    Sr,
    /// PSNR/SSIM table over a paired directory (hr/ with sr/, or hr/ with lr/ and --checkpoint)
    Eval,
    /// Parameter and multi-add counts for a configuration and input size
    Analyze,
    /// Crop, resize and downsample a directory of images into hr/ and lr/ pairs
    Degrade,
}

/// Lightweight Swin-Transformer super-resolution.
///
/// Environment: SRLITE_THREADS caps kernel threads (0 or unset = all cores).
/// Exit status: 0 success, 1 usage or configuration error, 2 runtime error.
#[derive(Debug, Parser)]
#[command(name = "srlite", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration; every key is optional
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Checkpoint to read (sr, eval) or to write and resume (train)
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Input image (sr) or directory (eval, degrade)
    #[arg(long = "in", value_name = "PATH")]
    input_path: Option<PathBuf>,
    /// Output image (sr) or directory (train, degrade)
    #[arg(long = "out", value_name = "PATH")]
    output_path: Option<PathBuf>,
    /// Low-resolution input size for analyze, e.g. 64x64
    #[arg(long = "input", value_name = "WxH", value_parser = parse_size)]
    size: Option<(usize, usize)>,
    /// Overrides train.seed
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let dim = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0);
    match (dim(w), dim(h)) {
        (Some(w), Some(h)) => Ok((w, h)),
        _ => Err(format!("expected two positive integers in `{s}`")),
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str, cmd: &str) -> Result<&'a Path, Failure> {
    v.as_deref()
        .ok_or_else(|| Failure::Usage(format!("`{cmd}` requires {flag}")))
}

/// Prints to stdout. A closed pipe (`srlite analyze | head`) is not an
/// error; other write failures are.
fn say(text: &str) -> Result<(), Failure> {
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Failure::Runtime(format!("writing output: {e}"))),
        _ => Ok(()),
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("SRLITE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("SRLITE_THREADS must be a non-negative integer, got `{raw}`")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Io { .. } => Failure::Usage(format!("cannot read config: {e}")),
            other => Failure::Usage(format!("invalid config {}: {other}", path.display())),
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    init_threads()?;
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Train => {
            let mut cfg = cfg;
            if let Some(out) = &cli.output_path {
                cfg.paths.out_dir = out.clone();
            }
            if let Some(ckpt) = &cli.checkpoint {
                cfg.paths.checkpoint = Some(ckpt.clone());
            }
            let report = run_training(&cfg, |line| eprintln!("{line}"))?;
            say(&format!("trained {} steps", report.steps))?;
            if let Some(l) = report.final_loss {
                say(&format!("final loss {l:.6}"))?;
            }
            if let Some(p) = report.final_val_psnr {
                say(&format!("validation PSNR {p:.4} dB"))?;
            }
            say(&format!("checkpoint {}", report.checkpoint.display()))?;
            say(&format!("log {}", report.log.display()))?;
        }
        Command::Sr => {
            let ckpt = required(&cli.checkpoint, "--checkpoint", "sr")?;
            let input = required(&cli.input_path, "--in", "sr")?;
            let output = required(&cli.output_path, "--out", "sr")?;
            let img = upscale_file(ckpt, input, output)?;
            say(&format!("wrote {} ({}x{})", output.display(), img.width, img.height))?;
        }
        Command::Eval => {
            let dir = required(&cli.input_path, "--in", "eval")?;
            let model = match &cli.checkpoint {
                Some(p) => Some(AnyModel::from_checkpoint(&Checkpoint::load(p)?)?.1),
                None => None,
            };
            say(format_eval_table(&evaluate_dir(dir, model.as_ref())?).trim_end())?;
        }
        Command::Analyze => {
            let (w, h) = cli.size.unwrap_or_else(|| {
                let lr = cfg.dataset.hr_size / cfg.scale();
                (lr, lr)
            });
            let report = match cfg.model {
                ModelKind::Mswinsr => analyze_mswinsr(&cfg.mswinsr, h, w),
                _ => analyze_ugswinsr(&cfg.ugswinsr, h, w),
            }
            .map_err(|e| Failure::Usage(format!("cannot analyze a {w}x{h} input: {e}")))?;
            say(&report.to_string())?;
            say(&report.to_json())?;
        }
        Command::Degrade => {
            let input = required(&cli.input_path, "--in", "degrade")?;
            let output = required(&cli.output_path, "--out", "degrade")?;
            let n = degrade_dir(input, output, cfg.dataset.hr_size, cfg.scale())?;
            say(&format!("wrote {n} pairs to {}", output.display()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
