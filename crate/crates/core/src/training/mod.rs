//! ADAM training over a fixed pair set, feature standardization, the
//! similarity-head fit and binary checkpoints.

mod adam;
mod checkpoint;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, adam_step_encoder, AdamConfig, AdamMoments};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use crate::ingestion::{PairSet, SequencePair};
use crate::model::SequenceTensor;
use crate::network::{
    accumulate_gradients, Activation, CellKind, Embedding, EncoderConfig, EncoderParams, HeadParams,
    NetworkError, SiameseModel,
};
use crate::pipeline::Preprocessing;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty pair set")]
    EmptyPairs,
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

/// Optimizer settings, architecture switches and the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub margin: f64,
    pub cell: CellKind,
    pub activation: Activation,
    pub hidden_dim: usize,
    pub layers: usize,
    pub bidirectional: bool,
    /// Full-batch ADAM iterations for the head fit.
    pub head_iterations: usize,
    pub head_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            margin: 1.0,
            cell: CellKind::Gru,
            activation: Activation::Tanh,
            hidden_dim: 128,
            layers: 2,
            bidirectional: true,
            head_iterations: 300,
            head_learning_rate: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must be in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be > 0");
        }
        if self.hidden_dim == 0 || self.layers == 0 {
            return bad("hidden_dim and layers must be >= 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn encoder_config(&self, input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            cell: self.cell,
            activation: self.activation,
            input_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            bidirectional: self.bidirectional,
        }
    }
}

/// Per-feature mean and standard deviation of the training tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Pools every row of every tensor. Population std; zero-variance
    /// features get std 1.
    pub fn fit(tensors: &[SequenceTensor]) -> Result<Self, TrainError> {
        let first = tensors
            .first()
            .ok_or_else(|| TrainError::Shape("no tensors to normalize".into()))?;
        let f = first.cols();
        if tensors.iter().any(|t| t.cols() != f) {
            return Err(TrainError::Shape("tensors differ in feature count".into()));
        }
        let n: usize = tensors.iter().map(|t| t.rows()).sum();
        let mut mean = vec![0.0; f];
        for t in tensors {
            for r in 0..t.rows() {
                for (m, v) in mean.iter_mut().zip(t.row(r)) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for t in tensors {
            for r in 0..t.rows() {
                for ((s, v), m) in var.iter_mut().zip(t.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn feature_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, tensor: &SequenceTensor) -> Result<SequenceTensor, TrainError> {
        if tensor.cols() != self.mean.len() {
            return Err(TrainError::Shape(format!(
                "tensor has {} features, stats have {}",
                tensor.cols(),
                self.mean.len()
            )));
        }
        let f = tensor.cols();
        let values = tensor
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % f]) / self.std[i % f])
            .collect();
        tensor
            .with_values(values)
            .map_err(|e| TrainError::Shape(e.to_string()))
    }
}

/// Everything the network needs at inference: the trained model and the
/// preprocessing that produced its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModelParams {
    pub model: SiameseModel,
    pub preprocessing: Preprocessing,
}

/// A trained model before it is bundled with preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: SiameseModel,
    pub loss_history: Vec<f64>,
}

/// Trains the encoder by contrastive loss and then fits the head.
/// Identical inputs give bitwise-identical results.
pub fn train_model(pairs: &PairSet, cfg: &TrainConfig) -> Result<TrainedModel, TrainError> {
    cfg.validate()?;
    let first = pairs.pairs.first().ok_or(TrainError::EmptyPairs)?;
    let input_dim = first.a.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let encoder = EncoderParams::random(cfg.encoder_config(input_dim), &mut rng);
    let mut model = SiameseModel::new(encoder, cfg.margin);
    let adam = cfg.adam();
    let mut moments = AdamMoments::zeros(model.encoder.num_parameters());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = model.encoder.zeros_like();
            let weight = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (loss, _) = accumulate_gradients(&model, &pairs.pairs[i], weight, &mut grads)?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, batch });
                }
                epoch_loss += loss;
            }
            step += 1;
            adam_step_encoder(&mut model.encoder, &grads, &mut moments, step, &adam)?;
            if model.encoder.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
                return Err(TrainError::NonFiniteLoss { epoch, batch });
            }
        }
        history.push(epoch_loss / pairs.len() as f64);
    }
    model.head = fit_head(&model, &pairs.pairs, cfg)?;
    Ok(TrainedModel {
        model,
        loss_history: history,
    })
}

/// Trains and bundles the result with its preprocessing into a checkpoint.
pub fn train(pairs: &PairSet, cfg: &TrainConfig, preprocessing: Preprocessing) -> Result<Checkpoint, TrainError> {
    if let Some(p) = pairs.pairs.first() {
        if p.a.cols() != preprocessing.norm.feature_dim() {
            return Err(TrainError::Shape(format!(
                "pairs have {} features, preprocessing produces {}",
                p.a.cols(),
                preprocessing.norm.feature_dim()
            )));
        }
    }
    let trained = train_model(pairs, cfg)?;
    Ok(Checkpoint {
        params: SiameseModelParams {
            model: trained.model,
            preprocessing,
        },
        config: cfg.clone(),
        loss_history: trained.loss_history,
    })
}

/// Logistic regression of "same subject" on frozen `[e_a, e_b]`, full batch.
fn fit_head(model: &SiameseModel, pairs: &[SequencePair], cfg: &TrainConfig) -> Result<HeadParams, TrainError> {
    let embedded: Vec<(Embedding, Embedding, f64)> = pairs
        .iter()
        .map(|p| {
            let target = if p.is_positive() { 1.0 } else { 0.0 };
            Ok((model.encode(&p.a)?, model.encode(&p.b)?, target))
        })
        .collect::<Result<_, NetworkError>>()?;
    let emb = model.encoder.config.embedding_dim();
    let n = 2 * emb + 1;
    let mut theta = vec![0.0; n];
    let mut moments = AdamMoments::zeros(n);
    let adam = AdamConfig {
        learning_rate: cfg.head_learning_rate,
        ..cfg.adam()
    };
    let mut grad = vec![0.0; n];
    for it in 1..=cfg.head_iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (a, b, y) in &embedded {
            let head = HeadParams {
                weight: theta[..2 * emb].to_vec(),
                bias: theta[2 * emb],
            };
            let s = crate::network::similarity_score(&head, a, b)?;
            let r = (s - y) / embedded.len() as f64;
            for (g, x) in grad.iter_mut().zip(a.0.iter().chain(&b.0)) {
                *g += r * x;
            }
            grad[2 * emb] += r;
        }
        adam_step(&mut theta, &grad, &mut moments, it as u64, &adam)?;
    }
    Ok(HeadParams {
        weight: theta[..2 * emb].to_vec(),
        bias: theta[2 * emb],
    })
}

/// Writes the per-epoch loss log, one `epoch,loss` row per epoch.
pub fn write_loss_csv(history: &[f64], path: &Path) -> Result<(), TrainError> {
    let io = |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "epoch,loss").map_err(io)?;
    for (i, l) in history.iter().enumerate() {
        writeln!(f, "{},{l:?}", i + 1).map_err(io)?;
    }
    f.flush().map_err(io)
}
