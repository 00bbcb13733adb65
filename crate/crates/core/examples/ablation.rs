//! Same synthetic split, one training run per cell kind and landmark subset.
//!
//! cargo run --release --example ablation -- [epochs]

use std::time::Instant;

use gaitkit::network::CellKind;
use gaitkit::pipeline::{evaluate, fit, RunConfig};
use gaitkit::synthgen::{generate_cohort, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map_or(Ok(10), |s| s.parse())?;
    let cohort = generate_cohort(&SynthConfig {
        separation: 0.25,
        seed: 7,
        ..Default::default()
    })?;
    let (train, test) = cohort.split_at(12 * 8);

    println!("cell  landmarks   F  rank-1  pair-acc  time");
    for cell in [CellKind::Gru, CellKind::Lstm, CellKind::Rnn] {
        for landmarks in ["0-32", "11-32", "23-32"] {
            let mut cfg = RunConfig {
                landmarks: landmarks.parse()?,
                ..Default::default()
            };
            cfg.train.cell = cell;
            cfg.train.epochs = epochs;
            cfg.train.seed = 7;
            let start = Instant::now();
            let ckpt = fit(train, &cfg)?;
            let r = evaluate(&ckpt.params, test, cfg.policy(ckpt.params.model.margin))?;
            println!(
                "{cell:?}  {landmarks:<9} {:>3}  {:>6.2}  {:>8.2}  {:.1?}",
                r.feature_dim,
                r.rank1_accuracy,
                r.pair_accuracy,
                start.elapsed()
            );
        }
    }
    Ok(())
}
