//! Domain types shared by every stage of the pipeline.
//!
//! A [`RawTrajectory`] is a variable-length capture of 33-landmark poses. Cycle
//! segmentation turns it into a fixed-length [`GaitSequence`], and
//! [`flatten_sequence`] lays the selected landmarks out as the `N × F` matrix
//! fed to the recurrent encoder.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of body landmarks produced by the pose estimator.
pub const NUM_LANDMARKS: usize = 33;

/// Coordinates per landmark: `(x, y, z)`.
pub const COORDS: usize = 3;

/// Frames per gait sequence unless configured otherwise.
pub const DEFAULT_SEQUENCE_FRAMES: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("landmark frame has {0} landmarks, expected 33")]
    LandmarkCount(usize),
    #[error("non-finite coordinate at landmark {landmark}, axis {axis}")]
    NonFinite { landmark: usize, axis: usize },
    #[error("trajectory has no frames")]
    EmptyTrajectory,
    #[error("sequence has {got} frames, expected {expected}")]
    FrameCount { got: usize, expected: usize },
    #[error("source indices must be strictly increasing")]
    UnorderedIndices,
    #[error("invalid landmark subset: {0}")]
    Subset(String),
    #[error("tensor shape mismatch: {0}")]
    Shape(String),
}

/// One pose: 33 landmarks with `(x, y, z)` coordinates, all finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct LandmarkFrame([[f64; COORDS]; NUM_LANDMARKS]);

impl LandmarkFrame {
    pub fn new(coords: [[f64; COORDS]; NUM_LANDMARKS]) -> Result<Self, ModelError> {
        for (landmark, row) in coords.iter().enumerate() {
            for (axis, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(ModelError::NonFinite { landmark, axis });
                }
            }
        }
        Ok(Self(coords))
    }

    pub fn from_rows(rows: &[[f64; COORDS]]) -> Result<Self, ModelError> {
        let coords: [[f64; COORDS]; NUM_LANDMARKS] = rows
            .try_into()
            .map_err(|_| ModelError::LandmarkCount(rows.len()))?;
        Self::new(coords)
    }

    pub fn zeros() -> Self {
        Self([[0.0; COORDS]; NUM_LANDMARKS])
    }

    pub fn coords(&self) -> &[[f64; COORDS]; NUM_LANDMARKS] {
        &self.0
    }

    pub fn landmark(&self, index: usize) -> [f64; COORDS] {
        self.0[index]
    }

    /// Returns a copy with every landmark passed through `f`.
    pub fn map_points(
        &self,
        mut f: impl FnMut(usize, [f64; COORDS]) -> [f64; COORDS],
    ) -> Result<Self, ModelError> {
        let mut out = self.0;
        for (i, row) in out.iter_mut().enumerate() {
            *row = f(i, *row);
        }
        Self::new(out)
    }
}

impl TryFrom<Vec<[f64; 3]>> for LandmarkFrame {
    type Error = ModelError;

    fn try_from(rows: Vec<[f64; 3]>) -> Result<Self, Self::Error> {
        Self::from_rows(&rows)
    }
}

impl From<LandmarkFrame> for Vec<[f64; 3]> {
    fn from(frame: LandmarkFrame) -> Self {
        frame.0.to_vec()
    }
}

/// Walking condition tag: normal, carrying a bag, wearing a coat, or anything else.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Nm,
    Bg,
    Cl,
    Other(String),
}

impl Condition {
    pub fn as_str(&self) -> &str {
        match self {
            Condition::Nm => "NM",
            Condition::Bg => "BG",
            Condition::Cl => "CL",
            Condition::Other(s) => s,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<&str> for Condition {
    fn from(s: &str) -> Self {
        match s {
            "NM" => Condition::Nm,
            "BG" => Condition::Bg,
            "CL" => Condition::Cl,
            other => Condition::Other(other.to_string()),
        }
    }
}

impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(Condition::from(s.as_str()))
    }
}

/// Identity and capture metadata carried alongside frames and tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub subject_id: String,
    pub view_deg: f64,
    pub condition: Condition,
}

/// A variable-length capture of one walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrajectoryRecord", into = "RawTrajectoryRecord")]
pub struct RawTrajectory {
    pub subject_id: String,
    pub view_deg: f64,
    pub condition: Condition,
    pub fps: Option<f64>,
    frames: Vec<LandmarkFrame>,
}

/// Wire form of [`RawTrajectory`], one JSON Lines record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawTrajectoryRecord {
    pub subject_id: String,
    pub view_deg: f64,
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    pub frames: Vec<LandmarkFrame>,
}

impl TryFrom<RawTrajectoryRecord> for RawTrajectory {
    type Error = ModelError;

    fn try_from(r: RawTrajectoryRecord) -> Result<Self, Self::Error> {
        let mut traj = RawTrajectory::new(r.subject_id, r.view_deg, r.condition, r.frames)?;
        traj.fps = r.fps;
        Ok(traj)
    }
}

impl From<RawTrajectory> for RawTrajectoryRecord {
    fn from(t: RawTrajectory) -> Self {
        Self {
            subject_id: t.subject_id,
            view_deg: t.view_deg,
            condition: t.condition,
            fps: t.fps,
            frames: t.frames,
        }
    }
}

impl RawTrajectory {
    pub fn new(
        subject_id: impl Into<String>,
        view_deg: f64,
        condition: Condition,
        frames: Vec<LandmarkFrame>,
    ) -> Result<Self, ModelError> {
        if frames.is_empty() {
            return Err(ModelError::EmptyTrajectory);
        }
        Ok(Self {
            subject_id: subject_id.into(),
            view_deg,
            condition,
            fps: None,
            frames,
        })
    }

    pub fn frames(&self) -> &[LandmarkFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            subject_id: self.subject_id.clone(),
            view_deg: self.view_deg,
            condition: self.condition.clone(),
        }
    }

    /// Same metadata, frames replaced (e.g. after alignment).
    pub fn with_frames(&self, frames: Vec<LandmarkFrame>) -> Result<Self, ModelError> {
        let mut out = Self::new(
            self.subject_id.clone(),
            self.view_deg,
            self.condition.clone(),
            frames,
        )?;
        out.fps = self.fps;
        Ok(out)
    }
}

/// `N` frames covering one gait cycle, with the indices they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaitSequenceRecord", into = "GaitSequenceRecord")]
pub struct GaitSequence {
    provenance: Provenance,
    frames: Vec<LandmarkFrame>,
    source_indices: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaitSequenceRecord {
    subject_id: String,
    view_deg: f64,
    condition: Condition,
    source_indices: Vec<usize>,
    frames: Vec<LandmarkFrame>,
}

impl TryFrom<GaitSequenceRecord> for GaitSequence {
    type Error = ModelError;

    fn try_from(r: GaitSequenceRecord) -> Result<Self, Self::Error> {
        GaitSequence::new(
            Provenance {
                subject_id: r.subject_id,
                view_deg: r.view_deg,
                condition: r.condition,
            },
            r.frames,
            r.source_indices,
        )
    }
}

impl From<GaitSequence> for GaitSequenceRecord {
    fn from(s: GaitSequence) -> Self {
        Self {
            subject_id: s.provenance.subject_id,
            view_deg: s.provenance.view_deg,
            condition: s.provenance.condition,
            source_indices: s.source_indices,
            frames: s.frames,
        }
    }
}

impl GaitSequence {
    pub fn new(
        provenance: Provenance,
        frames: Vec<LandmarkFrame>,
        source_indices: Vec<usize>,
    ) -> Result<Self, ModelError> {
        if frames.is_empty() {
            return Err(ModelError::EmptyTrajectory);
        }
        if source_indices.len() != frames.len() {
            return Err(ModelError::FrameCount {
                got: source_indices.len(),
                expected: frames.len(),
            });
        }
        if source_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::UnorderedIndices);
        }
        Ok(Self {
            provenance,
            frames,
            source_indices,
        })
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn subject_id(&self) -> &str {
        &self.provenance.subject_id
    }

    pub fn frames(&self) -> &[LandmarkFrame] {
        &self.frames
    }

    pub fn source_indices(&self) -> &[usize] {
        &self.source_indices
    }

    /// Number of frames `N`.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn with_frames(&self, frames: Vec<LandmarkFrame>) -> Result<Self, ModelError> {
        Self::new(self.provenance.clone(), frames, self.source_indices.clone())
    }
}

/// Strictly increasing, non-empty set of landmark indices in `[0, 32]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LandmarkSubset(Vec<usize>);

impl LandmarkSubset {
    pub fn new(indices: Vec<usize>) -> Result<Self, ModelError> {
        if indices.is_empty() {
            return Err(ModelError::Subset("empty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= NUM_LANDMARKS) {
            return Err(ModelError::Subset(format!("index {bad} out of range 0-32")));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::Subset(
                "indices must be strictly increasing without duplicates".into(),
            ));
        }
        Ok(Self(indices))
    }

    /// All 33 landmarks.
    pub fn full() -> Self {
        Self((0..NUM_LANDMARKS).collect())
    }

    /// Inclusive index range, e.g. `range(23, 32)`.
    pub fn range(lo: usize, hi: usize) -> Result<Self, ModelError> {
        if lo > hi {
            return Err(ModelError::Subset(format!("empty range {lo}-{hi}")));
        }
        Self::new((lo..=hi).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, landmark: usize) -> bool {
        self.0.binary_search(&landmark).is_ok()
    }

    /// Per-frame feature width `F = 3 × |subset|`.
    pub fn feature_dim(&self) -> usize {
        COORDS * self.0.len()
    }
}

impl TryFrom<Vec<usize>> for LandmarkSubset {
    type Error = ModelError;

    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<LandmarkSubset> for Vec<usize> {
    fn from(s: LandmarkSubset) -> Self {
        s.0
    }
}

/// Parses `0-32`, `23-32`, `11,12,23-32` and similar comma lists of ranges.
impl FromStr for LandmarkSubset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |part: &str| ModelError::Subset(format!("cannot parse `{part}`"));
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('-') {
                Some((lo, hi)) => {
                    let lo: usize = lo.trim().parse().map_err(|_| bad(part))?;
                    let hi: usize = hi.trim().parse().map_err(|_| bad(part))?;
                    if lo > hi {
                        return Err(bad(part));
                    }
                    out.extend(lo..=hi);
                }
                None => out.push(part.parse().map_err(|_| bad(part))?),
            }
        }
        out.sort_unstable();
        let before = out.len();
        out.dedup();
        if out.len() != before {
            return Err(ModelError::Subset(format!("duplicate index in `{s}`")));
        }
        Self::new(out)
    }
}

impl fmt::Display for LandmarkSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Compress runs back into `a-b` form.
        let mut parts = Vec::new();
        let mut i = 0;
        while i < self.0.len() {
            let start = self.0[i];
            let mut j = i;
            while j + 1 < self.0.len() && self.0[j + 1] == self.0[j] + 1 {
                j += 1;
            }
            if j > i {
                parts.push(format!("{start}-{}", self.0[j]));
            } else {
                parts.push(start.to_string());
            }
            i = j + 1;
        }
        f.write_str(&parts.join(","))
    }
}

/// Row-major `N × F` matrix of encoder inputs; row `t` is the input at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceTensor {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    provenance: Provenance,
}

impl SequenceTensor {
    pub fn new(
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self, ModelError> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(ModelError::Shape(format!(
                "{} values for a {rows}x{cols} tensor",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Shape("non-finite entry".into()));
        }
        Ok(Self {
            rows,
            cols,
            values,
            provenance,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.cols..(t + 1) * self.cols]
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn subject_id(&self) -> &str {
        &self.provenance.subject_id
    }

    /// Same provenance, new values of the same shape.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(self.rows, self.cols, values, self.provenance.clone())
    }
}

/// Lays out the subset landmarks of each frame as one tensor row, landmarks in
/// ascending index order and `(x, y, z)` within each landmark.
pub fn flatten_sequence(seq: &GaitSequence, subset: &LandmarkSubset) -> SequenceTensor {
    let cols = subset.feature_dim();
    let mut values = Vec::with_capacity(seq.len() * cols);
    for frame in seq.frames() {
        for &l in subset.indices() {
            values.extend_from_slice(&frame.landmark(l));
        }
    }
    SequenceTensor {
        rows: seq.len(),
        cols,
        values,
        provenance: seq.provenance().clone(),
    }
}
