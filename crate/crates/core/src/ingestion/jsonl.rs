//! Canonical landmark file: UTF-8 JSON Lines, one trajectory per line.
//!
//! ```text
//! {"subject_id": "001", "view_deg": 90, "condition": "NM", "fps": 25, "frames": [[[x,y,z] x33] xT]}
//! ```
//!
//! Numbers are written in shortest round-trip form and parsed exactly, so a
//! write followed by a read reproduces every coordinate bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::model::{GaitSequence, ModelError, RawTrajectory};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid record: {0}")]
    Invalid(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IngestError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        // serde_json names the offending field ("missing field `subject_id`").
        let record = serde_json::from_str(&line).map_err(|e| IngestError::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), IngestError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for (i, item) in items.iter().enumerate() {
        serde_json::to_writer(&mut w, item).map_err(|e| IngestError::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads every trajectory in a landmark file, preserving line order.
pub fn read_landmark_file(path: impl AsRef<Path>) -> Result<Vec<RawTrajectory>, IngestError> {
    read_jsonl(path.as_ref())
}

/// Writes trajectories one per line. Every frame is re-validated first so a
/// non-finite coordinate never reaches disk.
pub fn write_landmark_file(
    trajectories: &[RawTrajectory],
    path: impl AsRef<Path>,
) -> Result<(), IngestError> {
    for traj in trajectories {
        for frame in traj.frames() {
            crate::model::LandmarkFrame::new(*frame.coords())?;
        }
    }
    write_jsonl(trajectories, path.as_ref())
}

/// Segmented-sequence file: JSON Lines of `{subject_id, view_deg, condition,
/// source_indices, frames}` records.
pub fn read_sequence_file(path: impl AsRef<Path>) -> Result<Vec<GaitSequence>, IngestError> {
    read_jsonl(path.as_ref())
}

pub fn write_sequence_file(
    sequences: &[GaitSequence],
    path: impl AsRef<Path>,
) -> Result<(), IngestError> {
    write_jsonl(sequences, path.as_ref())
}
