//! Landmark files, dataset manifests and labeled training pairs.

mod jsonl;
mod manifest;
mod pairs;

pub use jsonl::{
    read_landmark_file, read_sequence_file, write_landmark_file, write_sequence_file,
    IngestError,
};
pub use manifest::{DatasetManifest, ManifestEntry, ManifestError, Split};
pub use pairs::{build_pairs, PairError, PairRatio, PairSet, SequencePair};
