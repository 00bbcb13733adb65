//! Shared test oracles.

use gaitkit::ingestion::SequencePair;
use gaitkit::model::SequenceTensor;
use gaitkit::network::{model_gradients, pair_loss, Activation, CellKind, EncoderConfig, SiameseModel};
use twofloat::TwoFloat;

pub const STEP: f64 = 1e-6;

// Finite differences of an f64 loss carry roundoff near eps * L / step, which
// is the same order as the smallest gradients checked here. The oracle below
// re-implements the forward pass in double-double arithmetic instead.
type Dd = TwoFloat;

fn dd_sigmoid(x: Dd) -> Dd {
    Dd::from(1.0) / (Dd::from(1.0) + (-x).exp())
}

fn dd_act(x: Dd, act: Activation) -> Dd {
    match act {
        Activation::Tanh => x.tanh(),
        Activation::Relu => {
            if x > Dd::from(0.0) {
                x
            } else {
                Dd::from(0.0)
            }
        }
    }
}

/// Parameters of one cell: per gate a row-major `H x (H + input)` weight and a bias.
struct DdCell {
    gates: Vec<(Vec<Dd>, Vec<Dd>)>,
}

fn dd_affine(gate: &(Vec<Dd>, Vec<Dd>), u: &[Dd]) -> Vec<Dd> {
    let (w, b) = gate;
    let cols = u.len();
    (0..b.len())
        .map(|r| {
            let mut acc = b[r];
            for c in 0..cols {
                acc += w[r * cols + c] * u[c];
            }
            acc
        })
        .collect()
}

fn dd_run(kind: CellKind, act: Activation, cell: &DdCell, xs: &[Vec<Dd>], h_dim: usize) -> Vec<Vec<Dd>> {
    let zero = Dd::from(0.0);
    let mut h = vec![zero; h_dim];
    let mut c = vec![zero; h_dim];
    let mut out = Vec::new();
    for x in xs {
        let u: Vec<Dd> = h.iter().chain(x).copied().collect();
        match kind {
            CellKind::Gru => {
                let z: Vec<Dd> = dd_affine(&cell.gates[0], &u).into_iter().map(dd_sigmoid).collect();
                let r: Vec<Dd> = dd_affine(&cell.gates[1], &u).into_iter().map(dd_sigmoid).collect();
                let u2: Vec<Dd> = (0..h_dim).map(|k| r[k] * h[k]).chain(x.iter().copied()).collect();
                let cand: Vec<Dd> = dd_affine(&cell.gates[2], &u2).into_iter().map(|v| dd_act(v, act)).collect();
                h = (0..h_dim).map(|k| (Dd::from(1.0) - z[k]) * h[k] + z[k] * cand[k]).collect();
            }
            CellKind::Lstm => {
                let i: Vec<Dd> = dd_affine(&cell.gates[0], &u).into_iter().map(dd_sigmoid).collect();
                let f: Vec<Dd> = dd_affine(&cell.gates[1], &u).into_iter().map(dd_sigmoid).collect();
                let o: Vec<Dd> = dd_affine(&cell.gates[2], &u).into_iter().map(dd_sigmoid).collect();
                let g: Vec<Dd> = dd_affine(&cell.gates[3], &u).into_iter().map(|v| dd_act(v, act)).collect();
                c = (0..h_dim).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
                h = (0..h_dim).map(|k| o[k] * c[k].tanh()).collect();
            }
            CellKind::Rnn => {
                h = dd_affine(&cell.gates[0], &u).into_iter().map(|v| dd_act(v, act)).collect();
            }
        }
        out.push(h.clone());
    }
    out
}

fn dd_embed(cfg: &EncoderConfig, cells: &[DdCell], t: &SequenceTensor) -> Vec<Dd> {
    let mut xs: Vec<Vec<Dd>> = (0..t.rows()).map(|r| t.row(r).iter().map(|&v| Dd::from(v)).collect()).collect();
    let per_layer = if cfg.bidirectional { 2 } else { 1 };
    let h = cfg.hidden_dim;
    let mut emb = Vec::new();
    for layer in 0..cfg.layers {
        let fwd = dd_run(cfg.cell, cfg.activation, &cells[layer * per_layer], &xs, h);
        let bwd = if cfg.bidirectional {
            let rev: Vec<Vec<Dd>> = xs.iter().rev().cloned().collect();
            let mut b = dd_run(cfg.cell, cfg.activation, &cells[layer * per_layer + 1], &rev, h);
            b.reverse();
            Some(b)
        } else {
            None
        };
        emb = fwd.last().unwrap().clone();
        if let Some(b) = &bwd {
            emb.extend(b[0].iter().copied());
        }
        xs = (0..xs.len())
            .map(|r| {
                let mut row = fwd[r].clone();
                if let Some(b) = &bwd {
                    row.extend(b[r].iter().copied());
                }
                row
            })
            .collect();
    }
    emb
}

fn dd_loss(model: &SiameseModel, params: &[Vec<Dd>], pair: &SequencePair) -> Dd {
    let cfg = &model.encoder.config;
    let gate_count = match cfg.cell {
        CellKind::Gru => 3,
        CellKind::Lstm => 4,
        CellKind::Rnn => 1,
    };
    let cells: Vec<DdCell> = params
        .chunks(2 * gate_count)
        .map(|c| DdCell {
            gates: c.chunks(2).map(|wb| (wb[0].clone(), wb[1].clone())).collect(),
        })
        .collect();
    let ea = dd_embed(cfg, &cells, &pair.a);
    let eb = dd_embed(cfg, &cells, &pair.b);
    let mut sq = Dd::from(0.0);
    for (x, y) in ea.iter().zip(&eb) {
        sq += (*x - *y) * (*x - *y);
    }
    let d = sq.sqrt();
    if pair.label() == 0 {
        sq
    } else {
        let gap = Dd::from(model.margin) - d;
        if gap > Dd::from(0.0) {
            gap * gap
        } else {
            Dd::from(0.0)
        }
    }
}

/// Returns the worst relative error and the number of parameters outside tolerance.
pub fn check(model: &SiameseModel, pair: &SequencePair) -> (f64, usize) {
    let analytic: Vec<f64> = model_gradients(model, pair).unwrap().encoder.slices().concat();
    let plain = pair_loss(model, pair).unwrap();
    let mut params: Vec<Vec<Dd>> = model
        .encoder
        .slices()
        .iter()
        .map(|s| s.iter().map(|&v| Dd::from(v)).collect())
        .collect();
    let base = dd_loss(model, &params, pair);
    assert!((base.hi() - plain).abs() <= 1e-12 * plain.abs().max(1.0), "oracle disagrees on the loss");
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    let mut idx = 0;
    for s in 0..params.len() {
        for k in 0..params[s].len() {
            let orig = params[s][k];
            params[s][k] = orig + STEP;
            let up = dd_loss(model, &params, pair);
            params[s][k] = orig - STEP;
            let down = dd_loss(model, &params, pair);
            params[s][k] = orig;
            let numeric = ((up - down) / (2.0 * STEP)).hi();
            let a = analytic[idx];
            idx += 1;
            let ok = if a.abs() < 1e-6 {
                (a - numeric).abs() < 1e-8
            } else {
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
                worst = worst.max(rel);
                rel < 1e-5
            };
            if !ok {
                failures += 1;
            }
        }
    }
    assert_eq!(idx, analytic.len());
    (worst, failures)
}

