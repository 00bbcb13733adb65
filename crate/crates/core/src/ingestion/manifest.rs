use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Condition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Gallery,
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// File path or record id, unique within a split.
    pub record_id: String,
    pub subject_id: String,
    pub view_deg: f64,
    pub condition: Condition,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("entry {0} has an empty subject id")]
    EmptySubject(usize),
    #[error("duplicate record id `{0}`")]
    DuplicateRecord(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed manifest: {0}")]
    Json(#[from] serde_json::Error),
}

/// A dataset split: which records belong to it and whom they show.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(split: Split, entries: Vec<ManifestEntry>) -> Result<Self, ManifestError> {
        let m = Self { split, entries };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.subject_id.is_empty() {
                return Err(ManifestError::EmptySubject(i));
            }
            if !seen.insert(e.record_id.as_str()) {
                return Err(ManifestError::DuplicateRecord(e.record_id.clone()));
            }
        }
        Ok(())
    }

    /// Distinct subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.subject_id.as_str()))
            .map(|e| e.subject_id.as_str())
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}
