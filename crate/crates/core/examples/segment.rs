//! Write a small synthetic JSONL file, read it back and cut one gait cycle
//! from each trajectory.
//!
//! cargo run --example segment -- [out_dir]

use gaitkit::ingestion::{read_landmark_file, write_landmark_file, write_sequence_file};
use gaitkit::segmentation::{segment_cycle, SegmentationConfig};
use gaitkit::synthgen::{generate_cohort, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/segment-demo".into()));
    std::fs::create_dir_all(&out)?;
    let cohort = generate_cohort(&SynthConfig {
        subjects: 3,
        trajectories_per_subject: 2,
        seed: 1,
        ..Default::default()
    })?;
    let raw_path = out.join("landmarks.jsonl");
    write_landmark_file(&cohort, &raw_path)?;

    let cfg = SegmentationConfig::default();
    let mut sequences = Vec::new();
    for traj in read_landmark_file(&raw_path)? {
        let seq = segment_cycle(&traj, &cfg)?;
        println!("{} view {:>4}: {} frames -> {}", traj.subject_id, traj.view_deg, traj.len(), seq.frames().len());
        sequences.push(seq);
    }
    write_sequence_file(&sequences, out.join("sequences.jsonl"))?;
    println!("wrote {}", out.display());
    Ok(())
}
