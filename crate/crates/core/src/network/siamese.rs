//! Siamese comparison: one shared encoder, Euclidean distance, contrastive
//! loss, and a dense + sigmoid similarity head.

use serde::{Deserialize, Serialize};

use super::encoder::{encode_tensor, encode_trace, encoder_backward, tensor_matrix, Embedding, EncoderParams};
use super::linalg::{dot, sigmoid};
use super::NetworkError;
use crate::ingestion::SequencePair;
use crate::model::SequenceTensor;

/// Dense layer over the concatenated embeddings `[e_a, e_b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl HeadParams {
    pub fn zeros(embedding_dim: usize) -> Self {
        Self {
            weight: vec![0.0; 2 * embedding_dim],
            bias: 0.0,
        }
    }
}

/// The trainable network: the encoder both branches share, the head, and the
/// contrastive margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiameseModel {
    pub encoder: EncoderParams,
    pub head: HeadParams,
    pub margin: f64,
}

impl SiameseModel {
    pub fn new(encoder: EncoderParams, margin: f64) -> Self {
        let head = HeadParams::zeros(encoder.config.embedding_dim());
        Self {
            encoder,
            head,
            margin,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        self.encoder.validate()?;
        if self.head.weight.len() != 2 * self.encoder.config.embedding_dim() {
            return Err(NetworkError::Shape("head width".into()));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(NetworkError::Shape(format!("margin {}", self.margin)));
        }
        if self.head.weight.iter().chain([&self.head.bias]).any(|v| !v.is_finite()) {
            return Err(NetworkError::Shape("non-finite head weight".into()));
        }
        Ok(())
    }

    pub fn encode(&self, tensor: &SequenceTensor) -> Result<Embedding, NetworkError> {
        encode(&self.encoder, tensor)
    }
}

/// Embeds one standardized tensor.
pub fn encode(encoder: &EncoderParams, tensor: &SequenceTensor) -> Result<Embedding, NetworkError> {
    if tensor.cols() != encoder.config.input_dim {
        return Err(NetworkError::Shape(format!(
            "tensor has {} features, encoder expects {}",
            tensor.cols(),
            encoder.config.input_dim
        )));
    }
    encode_tensor(encoder, tensor)
}

/// Euclidean distance `‖e_a − e_b‖₂`.
pub fn pair_distance(a: &Embedding, b: &Embedding) -> Result<f64, NetworkError> {
    if a.len() != b.len() {
        return Err(NetworkError::Shape(format!(
            "embedding lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// `L = (1 − Y)·D² + Y·max(0, m − D)²`, with `Y = 0` for a same-subject pair.
pub fn contrastive_loss(distance: f64, label: u8, margin: f64) -> f64 {
    if label == 0 {
        distance * distance
    } else {
        let hinge = (margin - distance).max(0.0);
        hinge * hinge
    }
}

/// `σ(W·[e_a, e_b] + b)` in `[0, 1]`.
pub fn similarity_score(head: &HeadParams, a: &Embedding, b: &Embedding) -> Result<f64, NetworkError> {
    if a.len() + b.len() != head.weight.len() {
        return Err(NetworkError::Shape(format!(
            "head expects {} inputs, got {} + {}",
            head.weight.len(),
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let logit = dot(&head.weight[..n], &a.0) + dot(&head.weight[n..], &b.0) + head.bias;
    Ok(sigmoid(logit))
}

/// Loss, distance and encoder gradient for one pair.
#[derive(Debug, Clone)]
pub struct PairGradient {
    pub loss: f64,
    pub distance: f64,
    pub encoder: EncoderParams,
}

/// Contrastive loss of a pair as a function of the encoder only.
pub fn pair_loss(model: &SiameseModel, pair: &SequencePair) -> Result<f64, NetworkError> {
    let ea = model.encode(&pair.a)?;
    let eb = model.encode(&pair.b)?;
    Ok(contrastive_loss(pair_distance(&ea, &eb)?, pair.label(), model.margin))
}

/// Exact gradient of the pair's contrastive loss w.r.t. every encoder
/// parameter. Both branches backpropagate into the same gradient buffer.
/// The hinge is flat at `D = m`, and the gradient is taken as zero at `D = 0`
/// for a dissimilar pair.
pub fn model_gradients(model: &SiameseModel, pair: &SequencePair) -> Result<PairGradient, NetworkError> {
    let mut grads = model.encoder.zeros_like();
    let (loss, distance) = accumulate_gradients(model, pair, 1.0, &mut grads)?;
    Ok(PairGradient {
        loss,
        distance,
        encoder: grads,
    })
}

/// Adds `weight × ∂L/∂θ` of one pair into `grads`; returns `(loss, distance)`.
pub fn accumulate_gradients(
    model: &SiameseModel,
    pair: &SequencePair,
    weight: f64,
    grads: &mut EncoderParams,
) -> Result<(f64, f64), NetworkError> {
    let cfg = &model.encoder.config;
    for t in [&pair.a, &pair.b] {
        if t.cols() != cfg.input_dim {
            return Err(NetworkError::Shape(format!(
                "tensor has {} features, encoder expects {}",
                t.cols(),
                cfg.input_dim
            )));
        }
    }
    let ta = encode_trace(&model.encoder, tensor_matrix(&pair.a))?;
    let tb = encode_trace(&model.encoder, tensor_matrix(&pair.b))?;
    let ea = ta.embedding(cfg);
    let eb = tb.embedding(cfg);
    let distance = pair_distance(&ea, &eb)?;
    let loss = contrastive_loss(distance, pair.label(), model.margin);

    // dL/de_a = coef · (e_a − e_b), dL/de_b = −dL/de_a
    let coef = if pair.label() == 0 {
        2.0
    } else if distance < model.margin && distance > 0.0 {
        -2.0 * (model.margin - distance) / distance
    } else {
        0.0
    };
    if coef != 0.0 {
        let da: Vec<f64> = ea.0.iter().zip(&eb.0).map(|(a, b)| weight * coef * (a - b)).collect();
        if da.iter().any(|&v| v != 0.0) {
            let db: Vec<f64> = da.iter().map(|v| -v).collect();
            encoder_backward(&model.encoder, &ta, &da, grads);
            encoder_backward(&model.encoder, &tb, &db, grads);
        }
    }
    Ok((loss, distance))
}
