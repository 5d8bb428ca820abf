//! Training loop, evaluation harness and their configuration.
//!
//! Training minimizes the summed rate of pixels, latents and hyper-latents
//! (bits per sub-pixel) with noise-relaxed quantization, plus an L2 term
//! between pixels and their predicted mixture mean during the first
//! `lambda_warm_epochs` epochs.

mod adam;
mod config;
mod data;
mod eval;
mod loss;


pub use adam::Adam;
pub use config::TrainConfig;
pub use data::{image_files, stack, synth_image, synth_set, Dataset, SynthKind};
pub use eval::{eval, EvalReport, EvalRow};
pub use loss::{loss, rounded_rate, LossParts, RateEstimate};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{Graph, TensorError};
use crate::codec::CodecError;
use crate::network::{ModelWeights, Network, NetworkError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("{name}: {width}x{height} is smaller than the {patch}x{patch} patch")]
    TooSmall {
        name: String,
        width: usize,
        height: usize,
        patch: usize,
    },
    #[error("i/o: {0}")]
    Io(String),
    #[error("non-finite loss at step {step}: {parts:?}")]
    NonFinite { step: usize, parts: LossParts },
    #[error("round trip failed for {0}")]
    RoundTrip(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub loss: f64,
    pub r_x: f64,
    pub r_y: f64,
    pub r_z: f64,
    pub lambda_term: f64,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Receives one JSON object per step, flushed as written.
    pub metrics: Option<&'a mut dyn Write>,
    /// Directory for `step{N}.nlw` checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    /// Starting weights; fresh ones from the config seed when absent.
    pub init: Option<ModelWeights>,
}

pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub records: Vec<StepRecord>,
}

fn write_line(out: &mut Option<&mut dyn Write>, value: &impl Serialize) -> Result<(), TrainError> {
    if let Some(w) = out.as_mut() {
        let line = serde_json::to_string(value).map_err(|e| TrainError::Io(e.to_string()))?;
        writeln!(w, "{line}")
            .and_then(|_| w.flush())
            .map_err(|e| TrainError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Trains with Adam; deterministic for a given config and dataset.
pub fn train(cfg: &TrainConfig, data: &Dataset, mut opts: TrainOptions<'_>) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut weights = match opts.init.take() {
        Some(w) if w.config() == &cfg.model => w,
        Some(_) => {
            return Err(TrainError::Config(
                "initial weights were built for another model config".into(),
            ))
        }
        None => ModelWeights::init(&cfg.model, cfg.seed)?,
    };
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::Io(format!("{}: {e}", dir.display())))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut adam = Adam::default();
    let mut records = Vec::new();
    let mut step = 0;
    'epochs: for epoch in 0..cfg.epochs {
        let (lr, lambda) = (cfg.learning_rate(epoch), cfg.lambda(epoch));
        for batch in data.epoch(cfg.batch_size, &mut rng) {
            let graph = Graph::new();
            let net = Network::bind(&graph, &weights, true);
            let (total, parts) = loss(&net, &batch, lambda, &mut rng)?;
            if !parts.is_finite() {
                write_line(
                    &mut opts.metrics,
                    &serde_json::json!({ "step": step, "abort": "non-finite loss", "parts": parts }),
                )?;
                return Err(TrainError::NonFinite { step, parts });
            }
            graph.backward(total)?;
            let grads: BTreeMap<_, _> = net
                .vars()
                .iter()
                .filter_map(|(k, v)| graph.grad(*v).map(|g| (k.clone(), g)))
                .collect();
            adam.step(&mut weights, &grads, lr);
            let record = StepRecord {
                step,
                epoch,
                lr,
                lambda,
                loss: parts.total,
                r_x: parts.r_x,
                r_y: parts.r_y,
                r_z: parts.r_z,
                lambda_term: parts.lambda_term,
            };
            write_line(&mut opts.metrics, &record)?;
            records.push(record);
            step += 1;
            if let Some(dir) = &opts.checkpoint_dir {
                if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                    weights.save(&dir.join(format!("step{step}.nlw")))?;
                }
            }
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                break 'epochs;
            }
        }
    }
    Ok(TrainOutcome { weights, records })
}
