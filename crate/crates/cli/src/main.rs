use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nlic::train::{self, Dataset, SynthKind, TrainOptions};
use nlic::{CodecError, Image, ModelWeights, NetworkError, TrainConfig, TrainError};

mod selftest;

#[derive(Parser, Debug)]
#[command(name = "nlic", version, about = "Learned lossless image codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on a directory of PPM/PNG images
    Train {
        /// key=value config file
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override config entries, e.g. --set epochs=5
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        data: PathBuf,
        /// Output weight file
        #[arg(long)]
        out: PathBuf,
        /// Write one JSON object per step here
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Write freshly initialized weights
    Init {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compress a PPM/PNG image into an NLIC stream
    Compress {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Print the rate report as JSON instead of one summary line
        #[arg(long)]
        json: bool,
    },
    /// Decompress an NLIC stream; the output format follows the extension
    Decompress {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compress, verify and report bpsp for every image in a directory
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// One JSON object per image instead of a table
        #[arg(long)]
        json: bool,
    },
    /// Write synthetic training images as PPM files
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Only this family: constant, gradient, texture, dithered, noise
        #[arg(long)]
        kind: Option<String>,
    },
    /// Run quick built-in consistency checks
    Selftest,
}

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Usage = 1,
    Data = 2,
    Integrity = 3,
}

fn classify(err: &anyhow::Error) -> Status {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CodecError>() {
            if e.is_integrity() {
                return Status::Integrity;
            }
        }
        if let Some(TrainError::Codec(e)) = cause.downcast_ref::<TrainError>() {
            if e.is_integrity() {
                return Status::Integrity;
            }
        }
        if let Some(TrainError::Config(_) | TrainError::Network(NetworkError::Config(_))) = cause.downcast_ref() {
            return Status::Usage;
        }
        if let Some(NetworkError::Config(_)) = cause.downcast_ref() {
            return Status::Usage;
        }
        if cause.downcast_ref::<UsageError>().is_some() {
            return Status::Usage;
        }
    }
    Status::Data
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Status::Usage as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e) as u8)
        }
    }
}

fn train_config(path: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_weights(path: &Path) -> Result<ModelWeights> {
    ModelWeights::load(path).with_context(|| format!("loading weights {}", path.display()))
}

fn load_dir(dir: &Path) -> Result<Vec<(String, Image)>> {
    let files = train::image_files(dir)?;
    if files.is_empty() {
        bail!("no .ppm or .png files in {}", dir.display());
    }
    files
        .into_iter()
        .map(|p| {
            let img = Image::load(&p).with_context(|| format!("reading {}", p.display()))?;
            Ok((p.display().to_string(), img))
        })
        .collect()
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            overrides,
            data,
            out,
            metrics,
            checkpoint_dir,
        } => {
            let cfg = train_config(config.as_deref(), &overrides)?;
            let dataset = Dataset::from_dir(&data, cfg.patch_size)?;
            let mut sink = metrics
                .map(|p| File::create(&p).with_context(|| format!("creating {}", p.display())))
                .transpose()?
                .map(BufWriter::new);
            let opts = TrainOptions {
                metrics: sink.as_mut().map(|w| w as &mut dyn Write),
                checkpoint_dir,
                init: None,
            };
            let outcome = train::train(&cfg, &dataset, opts)?;
            outcome.weights.save(&out)?;
            if let Some(last) = outcome.records.last() {
                eprintln!(
                    "trained {} steps on {} images, final loss {:.4} bpsp, weights {:016x}",
                    outcome.records.len(),
                    dataset.len(),
                    last.loss,
                    outcome.weights.hash()
                );
            }
        }
        Command::Init { config, overrides, out } => {
            let cfg = train_config(config.as_deref(), &overrides)?;
            ModelWeights::init(&cfg.model, cfg.seed)?.save(&out)?;
        }
        Command::Compress {
            weights,
            input,
            out,
            json,
        } => {
            let w = load_weights(&weights)?;
            let img = Image::load(&input).with_context(|| format!("reading {}", input.display()))?;
            let (stream, report) = nlic::compress(&img, &w)?;
            std::fs::write(&out, stream.to_bytes()).with_context(|| format!("writing {}", out.display()))?;
            if json {
                println!("{}", serde_json::to_string(&report)?);
            } else {
                println!(
                    "{}: {}x{} {} bytes {:.4} bpsp",
                    input.display(),
                    img.width(),
                    img.height(),
                    report.rate.total_bits / 8,
                    report.rate.bpsp
                );
            }
        }
        Command::Decompress { weights, input, out } => {
            let w = load_weights(&weights)?;
            let bytes = std::fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let img = nlic::decompress_bytes(&bytes, &w)?;
            img.save(&out).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Eval { weights, data, json } => {
            let w = load_weights(&weights)?;
            let images = load_dir(&data)?;
            let report = train::eval(&w, &images)?;
            if json {
                for r in &report.rows {
                    let line = serde_json::json!({
                        "path": r.path,
                        "bpsp": r.bpsp,
                        "bits_z": r.bits_z,
                        "bits_y": r.bits_y,
                        "bits_x": r.bits_x,
                    });
                    println!("{line}");
                }
            } else {
                print!("{}", report.table());
            }
        }
        Command::Synth {
            out,
            count,
            size,
            seed,
            kind,
        } => {
            if size == 0 {
                return Err(UsageError("--size must be positive".into()).into());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set: Vec<(SynthKind, Image)> = match kind.as_deref() {
                None => train::synth_set(count, size, &mut rng),
                Some(name) => {
                    let kind = parse_kind(name)?;
                    (0..count)
                        .map(|_| (kind, train::synth_image(kind, size, size, &mut rng)))
                        .collect()
                }
            };
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (i, (kind, img)) in set.iter().enumerate() {
                let path = out.join(format!("{i:03}_{}.ppm", kind.name()));
                img.save(&path).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Selftest => {
            if !selftest::run(&mut std::io::stdout()) {
                bail!("selftest failed");
            }
        }
    }
    Ok(())
}

fn parse_kind(name: &str) -> Result<SynthKind> {
    let all = [
        SynthKind::Constant,
        SynthKind::Gradient,
        SynthKind::Texture,
        SynthKind::Dithered,
        SynthKind::Noise,
    ];
    all.into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| UsageError(format!("unknown kind {name:?}")).into())
}
