//! End-to-end glue: trajectories in, checkpoints and reports out.
//!
//! Every frame is aligned to the mean shape first, then the aligned
//! trajectory is segmented, flattened and standardized.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{evaluate_embeddings, EvalError, EvalReport, LabeledEmbedding, ThresholdPolicy};
use crate::ingestion::{build_pairs, PairError, PairSet};
use crate::model::{flatten_sequence, GaitSequence, LandmarkSubset, RawTrajectory, SequenceTensor};
use crate::network::NetworkError;
use crate::procrustes::{align_trajectory, fit_mean_shape, GpaOptions, MeanShape, ProcrustesError};
use crate::segmentation::{segment_cycle, SegmentationConfig, SegmentationError};
use crate::training::{train, Checkpoint, NormalizationStats, SiameseModelParams, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("subject {subject}: {source}")]
    Segmentation {
        subject: String,
        #[source]
        source: SegmentationError,
    },
    #[error(transparent)]
    Procrustes(#[from] ProcrustesError),
    #[error(transparent)]
    Pairs(#[from] PairError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("no trajectories given")]
    Empty,
}

/// Frozen preprocessing: fitted once on training data, reused verbatim on
/// test data.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessing {
    pub subset: LandmarkSubset,
    pub dims: usize,
    pub allow_scale: bool,
    pub segmentation: SegmentationConfig,
    pub mean_shape: MeanShape,
    pub norm: NormalizationStats,
}

impl Preprocessing {
    pub fn feature_dim(&self) -> usize {
        self.subset.feature_dim()
    }

    pub fn align(&self, traj: &RawTrajectory) -> Result<RawTrajectory, PipelineError> {
        Ok(align_trajectory(traj, &self.mean_shape, &self.subset, self.allow_scale)?)
    }

    /// Aligned and segmented, not yet flattened.
    pub fn sequence(&self, traj: &RawTrajectory) -> Result<GaitSequence, PipelineError> {
        segment(&self.align(traj)?, &self.segmentation)
    }

    /// Aligned, segmented and flattened, before standardization.
    pub fn raw_tensor(&self, traj: &RawTrajectory) -> Result<SequenceTensor, PipelineError> {
        Ok(flatten_sequence(&self.sequence(traj)?, &self.subset))
    }

    /// Network-ready tensor.
    pub fn tensor(&self, traj: &RawTrajectory) -> Result<SequenceTensor, PipelineError> {
        Ok(self.norm.apply(&self.raw_tensor(traj)?)?)
    }
}

fn segment(traj: &RawTrajectory, cfg: &SegmentationConfig) -> Result<GaitSequence, PipelineError> {
    segment_cycle(traj, cfg).map_err(|source| PipelineError::Segmentation {
        subject: traj.subject_id.clone(),
        source,
    })
}

/// Options for fitting the preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub dims: usize,
    pub allow_scale: bool,
    /// Use every n-th training frame for the mean shape.
    pub frame_stride: usize,
    pub gpa: GpaOptions,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            dims: 3,
            allow_scale: true,
            frame_stride: 1,
            gpa: GpaOptions::default(),
        }
    }
}

/// GPA mean shape over the training frames.
pub fn fit_alignment(
    train: &[RawTrajectory],
    subset: &LandmarkSubset,
    align: &AlignConfig,
) -> Result<MeanShape, PipelineError> {
    if train.is_empty() {
        return Err(PipelineError::Empty);
    }
    let opts = GpaOptions {
        allow_scale: align.allow_scale,
        ..align.gpa
    };
    Ok(fit_mean_shape(train, subset, align.dims, align.frame_stride, &opts)?.mean)
}

/// Mean shape plus standardization statistics, all from training data.
pub fn fit_preprocessing(
    train: &[RawTrajectory],
    subset: &LandmarkSubset,
    segmentation: &SegmentationConfig,
    align: &AlignConfig,
) -> Result<(Preprocessing, Vec<SequenceTensor>), PipelineError> {
    let mean_shape = fit_alignment(train, subset, align)?;
    let mut pre = Preprocessing {
        subset: subset.clone(),
        dims: align.dims,
        allow_scale: align.allow_scale,
        segmentation: segmentation.clone(),
        mean_shape,
        norm: NormalizationStats {
            mean: vec![0.0; subset.feature_dim()],
            std: vec![1.0; subset.feature_dim()],
        },
    };
    let raw = train
        .iter()
        .map(|t| pre.raw_tensor(t))
        .collect::<Result<Vec<_>, _>>()?;
    pre.norm = NormalizationStats::fit(&raw)?;
    let tensors = raw.iter().map(|t| pre.norm.apply(t)).collect::<Result<Vec<_>, _>>()?;
    Ok((pre, tensors))
}

/// Everything one training run needs besides the trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub landmarks: LandmarkSubset,
    pub segmentation: SegmentationConfig,
    pub align: AlignConfig,
    pub train: TrainConfig,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    /// Verification threshold τ; `None` means half the margin.
    pub threshold: Option<f64>,
    /// Verify with the head instead of a distance threshold.
    pub head_verification: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            landmarks: LandmarkSubset::full(),
            segmentation: SegmentationConfig::default(),
            align: AlignConfig::default(),
            train: TrainConfig::default(),
            positive_pairs: 200,
            negative_pairs: 200,
            threshold: None,
            head_verification: false,
        }
    }
}

impl RunConfig {
    pub fn policy(&self, margin: f64) -> ThresholdPolicy {
        if self.head_verification {
            ThresholdPolicy::Head
        } else {
            self.threshold
                .map(ThresholdPolicy::Distance)
                .unwrap_or_else(|| ThresholdPolicy::default_for_margin(margin))
        }
    }
}

/// Pairs drawn from standardized training tensors; the seed is the run seed.
pub fn training_pairs(tensors: &[SequenceTensor], cfg: &RunConfig) -> Result<PairSet, PipelineError> {
    Ok(build_pairs(tensors, cfg.positive_pairs, cfg.negative_pairs, cfg.train.seed)?)
}

/// Fits preprocessing, draws pairs and trains.
pub fn fit(train_trajectories: &[RawTrajectory], cfg: &RunConfig) -> Result<Checkpoint, PipelineError> {
    let (pre, tensors) = fit_preprocessing(train_trajectories, &cfg.landmarks, &cfg.segmentation, &cfg.align)?;
    let pairs = training_pairs(&tensors, cfg)?;
    Ok(train(&pairs, &cfg.train, pre)?)
}

/// Embeds trajectories with a trained model.
pub fn embed(params: &SiameseModelParams, trajectories: &[RawTrajectory]) -> Result<Vec<LabeledEmbedding>, PipelineError> {
    trajectories
        .iter()
        .map(|t| {
            let tensor = params.preprocessing.tensor(t)?;
            Ok(LabeledEmbedding {
                provenance: tensor.provenance().clone(),
                embedding: params.model.encode(&tensor)?,
            })
        })
        .collect()
}

/// Rank-1 and verification metrics on held-out trajectories. The first
/// trajectory per subject is the gallery.
pub fn evaluate(
    params: &SiameseModelParams,
    test_trajectories: &[RawTrajectory],
    policy: ThresholdPolicy,
) -> Result<EvalReport, PipelineError> {
    let items = embed(params, test_trajectories)?;
    Ok(evaluate_embeddings(
        &params.model,
        &items,
        policy,
        params.preprocessing.subset.to_string(),
        params.preprocessing.feature_dim(),
    )?)
}
