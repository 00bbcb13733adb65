//! Stacked (bi)directional recurrent encoder.
//!
//! The forward cell scans `t = 1..N` and the backward cell `t = N..1`, both from
//! zero state; output row `t` is `[h_f(t), h_b(t)]`. Layer `i + 1` reads the
//! `N × 2H` output of layer `i`. The embedding is the final layer's pair of
//! end-of-scan states `[h_f(N), h_b(1)]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cell::{step_backward, step_with_cache, CellState, StepCache};
use super::linalg::Matrix;
use super::{Activation, CellKind, NetworkError, RecurrentCellParams};
use crate::model::SequenceTensor;

/// One recurrent layer. `backward` is `None` for the unidirectional ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLayerParams {
    pub forward: RecurrentCellParams,
    pub backward: Option<RecurrentCellParams>,
}

impl BiLayerParams {
    pub fn input_dim(&self) -> usize {
        self.forward.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        self.hidden_dim() * if self.backward.is_some() { 2 } else { 1 }
    }

    fn cells(&self) -> impl Iterator<Item = &RecurrentCellParams> {
        std::iter::once(&self.forward).chain(self.backward.as_ref())
    }

    fn zeros_like(&self) -> Self {
        Self {
            forward: self.forward.zeros_like(),
            backward: self.backward.as_ref().map(RecurrentCellParams::zeros_like),
        }
    }
}

/// Architecture switches; everything needed to rebuild an encoder's shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub cell: CellKind,
    pub activation: Activation,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Number of stacked layers.
    pub layers: usize,
    pub bidirectional: bool,
}

impl EncoderConfig {
    /// Dual-stack bidirectional GRU with 128 units per direction.
    pub fn dual_stack_bigru(input_dim: usize) -> Self {
        Self {
            cell: CellKind::Gru,
            activation: Activation::Tanh,
            input_dim,
            hidden_dim: 128,
            layers: 2,
            bidirectional: true,
        }
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.hidden_dim * self.directions()
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return Err(NetworkError::Shape(format!("degenerate encoder config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub layers: Vec<BiLayerParams>,
}

impl EncoderParams {
    fn build(
        config: EncoderConfig,
        mut make: impl FnMut(usize) -> RecurrentCellParams,
    ) -> Self {
        let mut layers = Vec::with_capacity(config.layers);
        let mut input = config.input_dim;
        for _ in 0..config.layers {
            let forward = make(input);
            let backward = config.bidirectional.then(|| make(input));
            layers.push(BiLayerParams { forward, backward });
            input = config.embedding_dim();
        }
        Self { config, layers }
    }

    pub fn zeros(config: EncoderConfig) -> Self {
        Self::build(config, |input| {
            RecurrentCellParams::zeros(config.cell, config.activation, input, config.hidden_dim)
        })
    }

    /// Seeded uniform `±1/√H` init, zero biases.
    pub fn random(config: EncoderConfig, rng: &mut impl Rng) -> Self {
        Self::build(config, |input| {
            RecurrentCellParams::random(config.cell, config.activation, input, config.hidden_dim, rng)
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            layers: self.layers.iter().map(BiLayerParams::zeros_like).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        self.config.validate()?;
        if self.layers.len() != self.config.layers {
            return Err(NetworkError::Shape("layer count".into()));
        }
        let mut input = self.config.input_dim;
        for layer in &self.layers {
            if layer.backward.is_some() != self.config.bidirectional {
                return Err(NetworkError::Shape("direction mismatch".into()));
            }
            for cell in layer.cells() {
                cell.validate()?;
                if cell.input_dim != input
                    || cell.hidden_dim != self.config.hidden_dim
                    || cell.kind != self.config.cell
                    || cell.activation != self.config.activation
                {
                    return Err(NetworkError::Shape(format!(
                        "cell {}->{} ({:?}) does not chain from input {input}",
                        cell.input_dim, cell.hidden_dim, cell.kind
                    )));
                }
            }
            input = layer.output_dim();
        }
        Ok(())
    }

    /// Every parameter array in fixed order: layers, forward then backward
    /// cell, gates in cell order, weights then bias.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| l.cells().flat_map(|c| c.slices()).collect::<Vec<_>>())
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.extend(l.forward.slices_mut());
            if let Some(b) = l.backward.as_mut() {
                out.extend(b.slices_mut());
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// `self += alpha * other` (same shapes).
    pub fn add_scaled(&mut self, alpha: f64, other: &EncoderParams) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            super::linalg::axpy(alpha, src, dst);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= alpha);
        }
    }
}

/// Forward states and caches of one direction.
struct DirectionTrace {
    /// `states[t]` is the state after consuming row `t`.
    states: Vec<CellState>,
    caches: Vec<StepCache>,
}

pub(crate) struct LayerTrace {
    forward: DirectionTrace,
    backward: Option<DirectionTrace>,
    pub(crate) output: Matrix,
}

fn scan(cell: &RecurrentCellParams, input: &Matrix, reverse: bool) -> DirectionTrace {
    let n = input.rows();
    let mut states: Vec<CellState> = vec![CellState::zeros(cell); n];
    let mut state = CellState::zeros(cell);
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    };
    let mut cache_slots: Vec<Option<StepCache>> = (0..n).map(|_| None).collect();
    for t in order {
        let (next, cache) = step_with_cache(cell, &state, input.row(t));
        states[t] = next.clone();
        cache_slots[t] = Some(cache);
        state = next;
    }
    let caches = cache_slots
        .into_iter()
        .map(|c| c.expect("every step visited"))
        .collect();
    DirectionTrace { states, caches }
}

pub(crate) fn layer_forward_trace(layer: &BiLayerParams, input: &Matrix) -> LayerTrace {
    let n = input.rows();
    let h = layer.hidden_dim();
    let forward = scan(&layer.forward, input, false);
    let backward = layer.backward.as_ref().map(|c| scan(c, input, true));
    let mut output = Matrix::zeros(n, layer.output_dim());
    for t in 0..n {
        let row = output.row_mut(t);
        row[..h].copy_from_slice(&forward.states[t].h);
        if let Some(b) = &backward {
            row[h..].copy_from_slice(&b.states[t].h);
        }
    }
    LayerTrace {
        forward,
        backward,
        output,
    }
}

fn backprop_direction(
    cell: &RecurrentCellParams,
    trace: &DirectionTrace,
    d_out: &Matrix,
    col_offset: usize,
    reverse: bool,
    grads: &mut RecurrentCellParams,
    d_input: &mut Matrix,
) {
    let n = d_out.rows();
    let hd = cell.hidden_dim;
    let zero = CellState::zeros(cell);
    let mut carry = zero.clone();
    // Visit steps in the opposite order of the scan.
    let order: Vec<usize> = if reverse { (0..n).collect() } else { (0..n).rev().collect() };
    for t in order {
        let prev_t = if reverse {
            (t + 1 < n).then_some(t + 1)
        } else {
            t.checked_sub(1)
        };
        let prev = prev_t.map_or(&zero, |p| &trace.states[p]);
        let dh: Vec<f64> = (0..hd)
            .map(|k| carry.h[k] + d_out.get(t, col_offset + k))
            .collect();
        carry = step_backward(
            cell,
            &trace.caches[t],
            &prev.h,
            &dh,
            &carry.c,
            grads,
            d_input.row_mut(t),
        );
    }
}

/// Accumulates parameter gradients of one layer and returns the gradient
/// w.r.t. its input, given the gradient w.r.t. its output.
pub(crate) fn layer_backward(
    layer: &BiLayerParams,
    input_rows: usize,
    trace: &LayerTrace,
    d_out: &Matrix,
    grads: &mut BiLayerParams,
) -> Matrix {
    let mut d_input = Matrix::zeros(input_rows, layer.input_dim());
    backprop_direction(
        &layer.forward,
        &trace.forward,
        d_out,
        0,
        false,
        &mut grads.forward,
        &mut d_input,
    );
    if let (Some(cell), Some(tr), Some(g)) = (&layer.backward, &trace.backward, grads.backward.as_mut()) {
        backprop_direction(cell, tr, d_out, layer.hidden_dim(), true, g, &mut d_input);
    }
    d_input
}

fn check_input(layer: &BiLayerParams, input: &Matrix) -> Result<(), NetworkError> {
    if input.rows() == 0 || input.cols() != layer.input_dim() {
        return Err(NetworkError::Shape(format!(
            "input is {}x{}, layer expects width {}",
            input.rows(),
            input.cols(),
            layer.input_dim()
        )));
    }
    Ok(())
}

/// Runs one layer over an `N × F_in` input, returning the `N × 2H` (or `N × H`)
/// output.
pub fn bilayer_forward(layer: &BiLayerParams, input: &Matrix) -> Result<Matrix, NetworkError> {
    check_input(layer, input)?;
    Ok(layer_forward_trace(layer, input).output)
}

/// Fixed-length summary of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub(crate) struct EncoderTrace {
    pub(crate) inputs: Vec<Matrix>,
    pub(crate) layers: Vec<LayerTrace>,
}

impl EncoderTrace {
    pub(crate) fn embedding(&self, config: &EncoderConfig) -> Embedding {
        embedding_from_output(&self.layers.last().expect("at least one layer").output, config)
    }
}

fn embedding_from_output(out: &Matrix, config: &EncoderConfig) -> Embedding {
    let h = config.hidden_dim;
    let n = out.rows();
    let mut e = out.row(n - 1)[..h].to_vec();
    if config.bidirectional {
        e.extend_from_slice(&out.row(0)[h..]);
    }
    Embedding(e)
}

pub(crate) fn tensor_matrix(tensor: &SequenceTensor) -> Matrix {
    Matrix::from_vec(tensor.rows(), tensor.cols(), tensor.values().to_vec())
}

pub(crate) fn encode_trace(
    encoder: &EncoderParams,
    input: Matrix,
) -> Result<EncoderTrace, NetworkError> {
    check_input(&encoder.layers[0], &input)?;
    let mut inputs = vec![input];
    let mut layers = Vec::with_capacity(encoder.layers.len());
    for (i, layer) in encoder.layers.iter().enumerate() {
        let trace = layer_forward_trace(layer, &inputs[i]);
        if i + 1 < encoder.layers.len() {
            inputs.push(trace.output.clone());
        }
        layers.push(trace);
    }
    Ok(EncoderTrace { inputs, layers })
}

/// Embeds a (standardized) sequence tensor.
pub fn encode_tensor(encoder: &EncoderParams, tensor: &SequenceTensor) -> Result<Embedding, NetworkError> {
    let mut x = tensor_matrix(tensor);
    for layer in &encoder.layers {
        x = bilayer_forward(layer, &x)?;
    }
    Ok(embedding_from_output(&x, &encoder.config))
}

/// Backpropagates a gradient w.r.t. the embedding into `grads`.
pub(crate) fn encoder_backward(
    encoder: &EncoderParams,
    trace: &EncoderTrace,
    d_embedding: &[f64],
    grads: &mut EncoderParams,
) {
    let cfg = &encoder.config;
    let h = cfg.hidden_dim;
    let last = trace.layers.len() - 1;
    let n = trace.inputs[0].rows();
    let mut d_out = Matrix::zeros(n, cfg.embedding_dim());
    d_out.row_mut(n - 1)[..h].copy_from_slice(&d_embedding[..h]);
    if cfg.bidirectional {
        d_out.row_mut(0)[h..].copy_from_slice(&d_embedding[h..]);
    }
    for i in (0..=last).rev() {
        d_out = layer_backward(
            &encoder.layers[i],
            n,
            &trace.layers[i],
            &d_out,
            &mut grads.layers[i],
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut impl Rng, n: usize, f: usize) -> Matrix {
        Matrix::from_fn(n, f, |_, _| rng.random_range(-1.0..1.0))
    }

    fn one_layer(rng: &mut impl Rng, kind: CellKind, f: usize, h: usize) -> BiLayerParams {
        BiLayerParams {
            forward: RecurrentCellParams::random(kind, Activation::Tanh, f, h, rng),
            backward: Some(RecurrentCellParams::random(kind, Activation::Tanh, f, h, rng)),
        }
    }

    #[test]
    fn time_reversal_swaps_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [CellKind::Gru, CellKind::Lstm, CellKind::Rnn] {
            let layer = one_layer(&mut rng, kind, 3, 4);
            let x = random_input(&mut rng, 6, 3);
            let out = bilayer_forward(&layer, &x).unwrap();

            let reversed = Matrix::from_fn(6, 3, |t, j| x.get(5 - t, j));
            let swapped = BiLayerParams {
                forward: layer.backward.clone().unwrap(),
                backward: Some(layer.forward.clone()),
            };
            let out2 = bilayer_forward(&swapped, &reversed).unwrap();
            for t in 0..6 {
                let a = out.row(5 - t);
                let b = out2.row(t);
                assert_eq!(&a[..4], &b[4..]);
                assert_eq!(&a[4..], &b[..4]);
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let cfg = EncoderConfig {
            cell: CellKind::Gru,
            activation: Activation::Tanh,
            input_dim: 5,
            hidden_dim: 3,
            layers: 2,
            bidirectional: true,
        };
        let enc = EncoderParams::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_input(&mut rng, 6, 5);
        let out = bilayer_forward(&enc.layers[0], &x).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let t = SequenceTensor::new(6, 5, x.data().to_vec(), crate::model::Provenance {
            subject_id: "a".into(),
            view_deg: 0.0,
            condition: crate::model::Condition::Nm,
        })
        .unwrap();
        assert_eq!(encode_tensor(&enc, &t).unwrap().0, vec![0.0; 6]);
    }

    #[test]
    fn hand_unrolled_scalar_recurrence() {
        // N = 3, H = 1, F = 1 GRU in both directions.
        let mk = |wz: [f64; 2], wr: [f64; 2], wh: [f64; 2]| {
            let mut c = RecurrentCellParams::zeros(CellKind::Gru, Activation::Tanh, 1, 1);
            c.gates[0].weight = Matrix::from_vec(1, 2, wz.to_vec());
            c.gates[1].weight = Matrix::from_vec(1, 2, wr.to_vec());
            c.gates[2].weight = Matrix::from_vec(1, 2, wh.to_vec());
            c.gates[0].bias = vec![0.1];
            c
        };
        let fwd = mk([0.5, -0.3], [0.2, 0.8], [-0.7, 1.1]);
        let bwd = mk([-0.4, 0.6], [0.9, -0.2], [0.3, 0.5]);
        let layer = BiLayerParams { forward: fwd, backward: Some(bwd) };
        let xs = [0.2, -1.0, 0.7];
        let x = Matrix::from_vec(3, 1, xs.to_vec());

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let step = |w: ([f64; 2], [f64; 2], [f64; 2]), h: f64, x: f64| {
            let z = sig(w.0[0] * h + w.0[1] * x + 0.1);
            let r = sig(w.1[0] * h + w.1[1] * x);
            let c = (w.2[0] * r * h + w.2[1] * x).tanh();
            (1.0 - z) * h + z * c
        };
        let wf = ([0.5, -0.3], [0.2, 0.8], [-0.7, 1.1]);
        let wb = ([-0.4, 0.6], [0.9, -0.2], [0.3, 0.5]);
        let f1 = step(wf, 0.0, xs[0]);
        let f2 = step(wf, f1, xs[1]);
        let f3 = step(wf, f2, xs[2]);
        let b3 = step(wb, 0.0, xs[2]);
        let b2 = step(wb, b3, xs[1]);
        let b1 = step(wb, b2, xs[0]);

        let out = bilayer_forward(&layer, &x).unwrap();
        let expected = [[f1, b1], [f2, b2], [f3, b3]];
        for t in 0..3 {
            for k in 0..2 {
                assert!((out.get(t, k) - expected[t][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn input_width_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = one_layer(&mut rng, CellKind::Gru, 3, 2);
        assert!(bilayer_forward(&layer, &Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn validate_catches_broken_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = EncoderConfig::dual_stack_bigru(6);
        let mut enc = EncoderParams::random(EncoderConfig { hidden_dim: 4, ..cfg }, &mut rng);
        assert!(enc.validate().is_ok());
        assert_eq!(enc.layers[1].input_dim(), 8);
        enc.layers[1].backward = None;
        assert!(enc.validate().is_err());
    }
}
