//! Recurrent cells: GRU, LSTM and a plain tanh/relu RNN.
//!
//! Every gate is an affine map of the concatenation `[h_prev, x_t]`, stored as
//! an `H × (H + F_in)` weight matrix plus a length-`H` bias.
//!
//! GRU, with `σ` the logistic function and `act` the candidate activation:
//!
//! ```text
//! z  = σ(W_z·[h_prev, x] + b_z)
//! r  = σ(W_r·[h_prev, x] + b_r)
//! h̃  = act(W_h·[r ⊙ h_prev, x] + b_h)
//! h  = (1 − z) ⊙ h_prev + z ⊙ h̃
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{sigmoid, Matrix};
use super::NetworkError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
    Rnn,
}

impl CellKind {
    pub fn gate_count(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
            CellKind::Rnn => 1,
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            "rnn" => Ok(CellKind::Rnn),
            other => Err(format!("unknown cell kind `{other}` (gru, lstm, rnn)")),
        }
    }
}

/// Candidate activation (GRU `h̃`, LSTM `g`, plain RNN output).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the output `y = act(x)`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(format!("unknown activation `{other}` (tanh, relu)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Gate {
    fn zeros(hidden: usize, concat: usize) -> Self {
        Self {
            weight: Matrix::zeros(hidden, concat),
            bias: vec![0.0; hidden],
        }
    }
}

/// Weights of one recurrent cell. Gate order: GRU `[z, r, h]`, LSTM
/// `[i, f, o, g]`, RNN `[h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentCellParams {
    pub kind: CellKind,
    pub activation: Activation,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub gates: Vec<Gate>,
}

impl RecurrentCellParams {
    pub fn zeros(kind: CellKind, activation: Activation, input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            kind,
            activation,
            input_dim,
            hidden_dim,
            gates: (0..kind.gate_count())
                .map(|_| Gate::zeros(hidden_dim, hidden_dim + input_dim))
                .collect(),
        }
    }

    /// Weights uniform in `±1/√H`, biases zero.
    pub fn random(
        kind: CellKind,
        activation: Activation,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut cell = Self::zeros(kind, activation, input_dim, hidden_dim);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        for gate in &mut cell.gates {
            for w in gate.weight.data_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        cell
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.kind, self.activation, self.input_dim, self.hidden_dim)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let concat = self.hidden_dim + self.input_dim;
        if self.gates.len() != self.kind.gate_count() {
            return Err(NetworkError::Shape(format!(
                "{:?} cell needs {} gates, has {}",
                self.kind,
                self.kind.gate_count(),
                self.gates.len()
            )));
        }
        for g in &self.gates {
            if g.weight.rows() != self.hidden_dim
                || g.weight.cols() != concat
                || g.bias.len() != self.hidden_dim
            {
                return Err(NetworkError::Shape(format!(
                    "gate is {}x{} + {}, expected {}x{} + {}",
                    g.weight.rows(),
                    g.weight.cols(),
                    g.bias.len(),
                    self.hidden_dim,
                    concat,
                    self.hidden_dim
                )));
            }
            if g.weight.data().iter().chain(&g.bias).any(|v| !v.is_finite()) {
                return Err(NetworkError::Shape("non-finite weight".into()));
            }
        }
        Ok(())
    }

    /// Parameter slices in storage order: for each gate, weights then bias.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.gates
            .iter()
            .flat_map(|g| [g.weight.data(), g.bias.as_slice()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.gates
            .iter_mut()
            .flat_map(|g| [g.weight.data_mut(), g.bias.as_mut_slice()])
            .collect()
    }
}

/// Recurrent state. `c` is the LSTM cell state and empty for other kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(cell: &RecurrentCellParams) -> Self {
        let c_len = if cell.kind == CellKind::Lstm { cell.hidden_dim } else { 0 };
        Self {
            h: vec![0.0; cell.hidden_dim],
            c: vec![0.0; c_len],
        }
    }
}

/// Intermediate values of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) enum StepCache {
    Gru {
        concat: Vec<f64>,
        reset_concat: Vec<f64>,
        z: Vec<f64>,
        r: Vec<f64>,
        cand: Vec<f64>,
    },
    Lstm {
        concat: Vec<f64>,
        c_prev: Vec<f64>,
        i: Vec<f64>,
        f: Vec<f64>,
        o: Vec<f64>,
        g: Vec<f64>,
        tanh_c: Vec<f64>,
    },
    Rnn {
        concat: Vec<f64>,
        h: Vec<f64>,
    },
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

fn gate_sigmoid(gate: &Gate, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; gate.bias.len()];
    gate.weight.affine_into(u, &gate.bias, &mut out);
    out.iter_mut().for_each(|v| *v = sigmoid(*v));
    out
}

fn gate_activation(gate: &Gate, u: &[f64], act: Activation) -> Vec<f64> {
    let mut out = vec![0.0; gate.bias.len()];
    gate.weight.affine_into(u, &gate.bias, &mut out);
    out.iter_mut().for_each(|v| *v = act.apply(*v));
    out
}

pub(crate) fn step_with_cache(
    cell: &RecurrentCellParams,
    prev: &CellState,
    x: &[f64],
) -> (CellState, StepCache) {
    let u = concat(&prev.h, x);
    match cell.kind {
        CellKind::Gru => {
            let z = gate_sigmoid(&cell.gates[0], &u);
            let r = gate_sigmoid(&cell.gates[1], &u);
            let rh: Vec<f64> = r.iter().zip(&prev.h).map(|(r, h)| r * h).collect();
            let u2 = concat(&rh, x);
            let cand = gate_activation(&cell.gates[2], &u2, cell.activation);
            let h = (0..cell.hidden_dim)
                .map(|k| (1.0 - z[k]) * prev.h[k] + z[k] * cand[k])
                .collect();
            (
                CellState { h, c: Vec::new() },
                StepCache::Gru {
                    concat: u,
                    reset_concat: u2,
                    z,
                    r,
                    cand,
                },
            )
        }
        CellKind::Lstm => {
            let i = gate_sigmoid(&cell.gates[0], &u);
            let f = gate_sigmoid(&cell.gates[1], &u);
            let o = gate_sigmoid(&cell.gates[2], &u);
            let g = gate_activation(&cell.gates[3], &u, cell.activation);
            let c: Vec<f64> = (0..cell.hidden_dim)
                .map(|k| f[k] * prev.c[k] + i[k] * g[k])
                .collect();
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let h = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
            (
                CellState { h, c: c.clone() },
                StepCache::Lstm {
                    concat: u,
                    c_prev: prev.c.clone(),
                    i,
                    f,
                    o,
                    g,
                    tanh_c,
                },
            )
        }
        CellKind::Rnn => {
            let h = gate_activation(&cell.gates[0], &u, cell.activation);
            (
                CellState { h: h.clone(), c: Vec::new() },
                StepCache::Rnn { concat: u, h },
            )
        }
    }
}

/// One recurrence step of any cell kind.
pub fn cell_step(
    cell: &RecurrentCellParams,
    prev: &CellState,
    x: &[f64],
) -> Result<CellState, NetworkError> {
    if x.len() != cell.input_dim || prev.h.len() != cell.hidden_dim {
        return Err(NetworkError::Shape(format!(
            "step input {} / state {}, cell expects {} / {}",
            x.len(),
            prev.h.len(),
            cell.input_dim,
            cell.hidden_dim
        )));
    }
    Ok(step_with_cache(cell, prev, x).0)
}

/// GRU step `h_t = GRU(h_prev, x_t)`.
pub fn cell_step_gru(
    cell: &RecurrentCellParams,
    h_prev: &[f64],
    x: &[f64],
) -> Result<Vec<f64>, NetworkError> {
    if cell.kind != CellKind::Gru {
        return Err(NetworkError::Shape(format!("{:?} cell is not a GRU", cell.kind)));
    }
    let prev = CellState {
        h: h_prev.to_vec(),
        c: Vec::new(),
    };
    Ok(cell_step(cell, &prev, x)?.h)
}

/// Backpropagates one step. `dh`/`dc` are gradients w.r.t. this step's output
/// state; accumulates weight gradients into `grads` and input gradients into
/// `dx`, and returns the gradients w.r.t. the previous state.
pub(crate) fn step_backward(
    cell: &RecurrentCellParams,
    cache: &StepCache,
    prev_h: &[f64],
    dh: &[f64],
    dc: &[f64],
    grads: &mut RecurrentCellParams,
    dx: &mut [f64],
) -> CellState {
    let hd = cell.hidden_dim;
    let act = cell.activation;
    let mut du = vec![0.0; hd + cell.input_dim];
    let mut dh_prev = vec![0.0; hd];
    let mut dc_prev = Vec::new();
    match cache {
        StepCache::Gru {
            concat,
            reset_concat,
            z,
            r,
            cand,
        } => {
            let mut d_pre_z = vec![0.0; hd];
            let mut d_pre_h = vec![0.0; hd];
            for k in 0..hd {
                let dz = dh[k] * (cand[k] - prev_h[k]);
                d_pre_z[k] = dz * z[k] * (1.0 - z[k]);
                d_pre_h[k] = dh[k] * z[k] * act.derivative_from_output(cand[k]);
                dh_prev[k] = dh[k] * (1.0 - z[k]);
            }
            let gh = &mut grads.gates[2];
            gh.weight.outer_acc(&d_pre_h, reset_concat);
            gh.bias.iter_mut().zip(&d_pre_h).for_each(|(b, d)| *b += d);
            let mut du2 = vec![0.0; hd + cell.input_dim];
            cell.gates[2].weight.transpose_mul_acc(&d_pre_h, &mut du2);

            let mut d_pre_r = vec![0.0; hd];
            for k in 0..hd {
                let d_rh = du2[k];
                d_pre_r[k] = d_rh * prev_h[k] * r[k] * (1.0 - r[k]);
                dh_prev[k] += d_rh * r[k];
            }
            for (dxi, v) in dx.iter_mut().zip(&du2[hd..]) {
                *dxi += v;
            }

            for (gi, d) in [(0usize, &d_pre_z), (1, &d_pre_r)] {
                let g = &mut grads.gates[gi];
                g.weight.outer_acc(d, concat);
                g.bias.iter_mut().zip(d.iter()).for_each(|(b, d)| *b += d);
                cell.gates[gi].weight.transpose_mul_acc(d, &mut du);
            }
        }
        StepCache::Lstm {
            concat,
            c_prev,
            i,
            f,
            o,
            g,
            tanh_c,
        } => {
            let mut d_pre = vec![vec![0.0; hd]; 4];
            dc_prev = vec![0.0; hd];
            for k in 0..hd {
                let do_ = dh[k] * tanh_c[k];
                let dct = dc[k] + dh[k] * o[k] * (1.0 - tanh_c[k] * tanh_c[k]);
                let di = dct * g[k];
                let df = dct * c_prev[k];
                let dg = dct * i[k];
                dc_prev[k] = dct * f[k];
                d_pre[0][k] = di * i[k] * (1.0 - i[k]);
                d_pre[1][k] = df * f[k] * (1.0 - f[k]);
                d_pre[2][k] = do_ * o[k] * (1.0 - o[k]);
                d_pre[3][k] = dg * act.derivative_from_output(g[k]);
            }
            for (gi, d) in d_pre.iter().enumerate() {
                let gr = &mut grads.gates[gi];
                gr.weight.outer_acc(d, concat);
                gr.bias.iter_mut().zip(d).for_each(|(b, d)| *b += d);
                cell.gates[gi].weight.transpose_mul_acc(d, &mut du);
            }
        }
        StepCache::Rnn { concat, h } => {
            let d_pre: Vec<f64> = (0..hd)
                .map(|k| dh[k] * act.derivative_from_output(h[k]))
                .collect();
            let gr = &mut grads.gates[0];
            gr.weight.outer_acc(&d_pre, concat);
            gr.bias.iter_mut().zip(&d_pre).for_each(|(b, d)| *b += d);
            cell.gates[0].weight.transpose_mul_acc(&d_pre, &mut du);
        }
    }
    for k in 0..hd {
        dh_prev[k] += du[k];
    }
    for (dxi, v) in dx.iter_mut().zip(&du[hd..]) {
        *dxi += v;
    }
    CellState {
        h: dh_prev,
        c: dc_prev,
    }
}
