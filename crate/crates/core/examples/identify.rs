//! Synthetic cohort → train on 12 subjects → rank-1 on the other 8.
//!
//! cargo run --release --example identify -- [separation] [seed] [epochs]

use std::time::Instant;

use gaitkit::evaluation::{rank1_identify, GalleryIndex};
use gaitkit::network::Embedding;
use gaitkit::pipeline::{evaluate, fit, RunConfig};
use gaitkit::synthgen::{generate_cohort, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let separation: f64 = args.get(1).map_or(Ok(1.0), |s| s.parse())?;
    let seed: u64 = args.get(2).map_or(Ok(7), |s| s.parse())?;
    let epochs: usize = args.get(3).map_or(Ok(10), |s| s.parse())?;

    let cohort = generate_cohort(&SynthConfig {
        separation,
        seed,
        ..Default::default()
    })?;
    let (train, test) = cohort.split_at(12 * 8);

    let mut cfg = RunConfig::default();
    cfg.train.seed = seed;
    cfg.train.epochs = epochs;
    let start = Instant::now();
    let ckpt = fit(train, &cfg)?;
    println!("trained in {:.1?}, loss per epoch {:?}", start.elapsed(), ckpt.loss_history);

    // raw-feature nearest neighbour on the same preprocessed tensors
    let pre = &ckpt.params.preprocessing;
    let raw: Vec<(String, Embedding)> = test
        .iter()
        .map(|t| Ok((t.subject_id.clone(), Embedding(pre.tensor(t)?.values().to_vec()))))
        .collect::<Result<_, gaitkit::pipeline::PipelineError>>()?;
    let gallery: Vec<_> = raw.iter().step_by(8).cloned().collect();
    let probes: Vec<_> = raw.iter().enumerate().filter(|(i, _)| i % 8 != 0).map(|(_, p)| p.clone()).collect();
    let nn = rank1_identify(&GalleryIndex::new(gallery)?, &probes)?;
    println!("raw-feature 1-NN rank-1: {:.2}%", nn.accuracy);

    let report = evaluate(&ckpt.params, test, cfg.policy(ckpt.params.model.margin))?;
    println!("{}", report.to_json());
    Ok(())
}
