//! Gait-cycle extraction driven by one foot landmark's trajectory.
//!
//! The tracking signal (one coordinate of one landmark) is smoothed with a
//! centered moving average. The first ascent whose rise covers at least
//! `amplitude_fraction` of the signal's range is located with a hysteresis
//! scan, and `N` frames are spread evenly from its trough to its crest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GaitSequence, RawTrajectory, DEFAULT_SEQUENCE_FRAMES, NUM_LANDMARKS};

/// Left foot index in the 33-landmark convention.
pub const LEFT_FOOT_INDEX: usize = 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub tracking_landmark: usize,
    pub axis: Axis,
    /// Odd moving-average width; 1 disables smoothing.
    pub smoothing_window: usize,
    /// Minimum rise of the ascent as a fraction of the global range, in (0, 1].
    pub amplitude_fraction: f64,
    pub n_frames: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            tracking_landmark: LEFT_FOOT_INDEX,
            axis: Axis::X,
            smoothing_window: 5,
            amplitude_fraction: 0.5,
            n_frames: DEFAULT_SEQUENCE_FRAMES,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        let bad = |m: &str| Err(SegmentationError::InvalidConfig(m.to_string()));
        if self.tracking_landmark >= NUM_LANDMARKS {
            return bad("tracking_landmark must be in 0-32");
        }
        if self.smoothing_window == 0 || self.smoothing_window % 2 == 0 {
            return bad("smoothing_window must be odd and >= 1");
        }
        if !(self.amplitude_fraction > 0.0 && self.amplitude_fraction <= 1.0) {
            return bad("amplitude_fraction must be in (0, 1]");
        }
        if self.n_frames < 2 {
            return bad("n_frames must be >= 2");
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SegmentationError {
    #[error("trajectory has {len} frames, need at least {needed}")]
    TrajectoryTooShort { len: usize, needed: usize },
    #[error("no gait cycle found: {0}")]
    NoCycleFound(String),
    #[error("ascent {i_min}..={i_max} cannot hold {n_frames} distinct frames")]
    AscentTooShort {
        i_min: usize,
        i_max: usize,
        n_frames: usize,
    },
    #[error("invalid segmentation config: {0}")]
    InvalidConfig(String),
}

/// Centered moving average; windows are truncated at the edges.
pub fn smooth(signal: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..signal.len())
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(signal.len() - 1);
            signal[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Locates the first ascent rising by at least `min_rise`.
///
/// The trough is the running minimum until the signal first climbs `min_rise`
/// above it; the crest is the running maximum from there until the signal
/// falls `min_rise` below it or ends. Ties keep the earliest index.
pub fn first_ascent(signal: &[f64], min_rise: f64) -> Option<(usize, usize)> {
    let mut trough = 0;
    let mut crest: Option<usize> = None;
    for t in 1..signal.len() {
        match crest {
            None => {
                if signal[t] < signal[trough] {
                    trough = t;
                } else if signal[t] - signal[trough] >= min_rise {
                    crest = Some(t);
                }
            }
            Some(c) => {
                if signal[t] > signal[c] {
                    crest = Some(t);
                } else if signal[c] - signal[t] >= min_rise {
                    return Some((trough, c));
                }
            }
        }
    }
    crest.map(|c| (trough, c))
}

/// `N` increasing indices spread evenly over `[i_min, i_max]`, rounding half
/// away from zero; collisions push later indices forward by one.
pub fn spread_indices(
    i_min: usize,
    i_max: usize,
    n_frames: usize,
) -> Result<Vec<usize>, SegmentationError> {
    let too_short = SegmentationError::AscentTooShort {
        i_min,
        i_max,
        n_frames,
    };
    let span = (i_max - i_min) as f64;
    let mut out: Vec<usize> = Vec::with_capacity(n_frames);
    for j in 0..n_frames {
        let mut idx = (i_min as f64 + j as f64 * span / (n_frames - 1) as f64).round() as usize;
        if let Some(&prev) = out.last() {
            if idx <= prev {
                idx = prev + 1;
            }
        }
        if idx > i_max {
            return Err(too_short);
        }
        out.push(idx);
    }
    Ok(out)
}

/// Tracking signal of a trajectory before smoothing.
pub fn tracking_signal(traj: &RawTrajectory, cfg: &SegmentationConfig) -> Vec<f64> {
    traj.frames()
        .iter()
        .map(|f| f.landmark(cfg.tracking_landmark)[cfg.axis.index()])
        .collect()
}

/// Extracts `cfg.n_frames` frames covering the first qualifying ascent of the
/// tracking landmark. Frames come from the unsmoothed trajectory.
pub fn segment_cycle(
    traj: &RawTrajectory,
    cfg: &SegmentationConfig,
) -> Result<GaitSequence, SegmentationError> {
    cfg.validate()?;
    if traj.len() < cfg.n_frames {
        return Err(SegmentationError::TrajectoryTooShort {
            len: traj.len(),
            needed: cfg.n_frames,
        });
    }
    let signal = smooth(&tracking_signal(traj, cfg), cfg.smoothing_window);
    let (lo, hi) = signal
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range <= 0.0 {
        return Err(SegmentationError::NoCycleFound(
            "tracking signal is constant".into(),
        ));
    }
    let (i_min, i_max) = first_ascent(&signal, cfg.amplitude_fraction * range).ok_or_else(|| {
        SegmentationError::NoCycleFound(format!(
            "no ascent rises {:.3} of the range",
            cfg.amplitude_fraction
        ))
    })?;
    let indices = spread_indices(i_min, i_max, cfg.n_frames)?;
    let frames = indices.iter().map(|&i| traj.frames()[i].clone()).collect();
    Ok(GaitSequence::new(traj.provenance(), frames, indices)
        .expect("spread_indices yields strictly increasing indices"))
}
