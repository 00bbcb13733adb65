//! Seeded sinusoidal walkers for end-to-end runs without a licensed dataset.
//!
//! Coordinates are x forward, y up, z lateral. Each landmark oscillates
//! around a per-subject skeleton; the feet swing furthest along x.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Condition, LandmarkFrame, ModelError, RawTrajectory, COORDS, NUM_LANDMARKS};
use crate::procrustes::SimilarityTransform;

pub const DEFAULT_NOISE_SIGMA: f64 = 0.005;
/// Stride frequency of the template walker, cycles per frame.
pub const BASE_FREQUENCY: f64 = 1.0 / 40.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("trajectory needs at least 2 frames, got {0}")]
    TooShort(usize),
    #[error("separation must be > 0, got {0}")]
    Separation(f64),
    #[error("transform must be 3-dimensional")]
    TransformDims,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSubjectParams {
    pub subject_id: String,
    pub amplitude: Vec<[f64; COORDS]>,
    pub phase: Vec<f64>,
    /// Cycles per frame.
    pub frequency: f64,
    pub base: Vec<[f64; COORDS]>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSubjectParams {
    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma.max(0.0);
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.subject_id = id.into();
        self
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency
    }

    /// Noise-free position of every landmark at (possibly fractional) time `t`.
    pub fn pose_at(&self, t: f64) -> [[f64; COORDS]; NUM_LANDMARKS] {
        let mut out = [[0.0; COORDS]; NUM_LANDMARKS];
        for (l, p) in out.iter_mut().enumerate() {
            let s = (2.0 * PI * self.frequency * t + self.phase[l]).sin();
            for c in 0..COORDS {
                p[c] = self.base[l][c] + self.amplitude[l][c] * s;
            }
        }
        out
    }
}

fn template_base() -> [[f64; COORDS]; NUM_LANDMARKS] {
    let mut b = [[0.0; COORDS]; NUM_LANDMARKS];
    b[0] = [0.08, 1.62, 0.0];
    // eyes and ears, left then right
    for (i, z) in [(1, 0.02), (2, 0.035), (3, 0.05), (4, -0.02), (5, -0.035), (6, -0.05)] {
        b[i] = [0.07, 1.66, z];
    }
    b[7] = [0.0, 1.64, 0.08];
    b[8] = [0.0, 1.64, -0.08];
    b[9] = [0.07, 1.57, 0.025];
    b[10] = [0.07, 1.57, -0.025];
    let sided = |z: f64, left: bool| if left { z } else { -z };
    for (left, off) in [(true, 0), (false, 1)] {
        b[11 + off] = [0.0, 1.42, sided(0.2, left)];
        b[13 + off] = [-0.02, 1.15, sided(0.24, left)];
        b[15 + off] = [0.0, 0.9, sided(0.26, left)];
        b[17 + off] = [0.02, 0.84, sided(0.28, left)];
        b[19 + off] = [0.04, 0.83, sided(0.26, left)];
        b[21 + off] = [0.04, 0.87, sided(0.24, left)];
        b[23 + off] = [0.0, 0.95, sided(0.1, left)];
        b[25 + off] = [0.03, 0.52, sided(0.1, left)];
        b[27 + off] = [0.0, 0.09, sided(0.1, left)];
        b[29 + off] = [-0.06, 0.04, sided(0.1, left)];
        b[31 + off] = [0.16, 0.01, sided(0.11, left)];
    }
    b
}

fn template_amplitude(l: usize) -> [f64; COORDS] {
    match l {
        27..=32 => [0.32, 0.05, 0.01],
        25 | 26 => [0.16, 0.03, 0.01],
        15..=22 => [0.14, 0.02, 0.01],
        13 | 14 => [0.07, 0.01, 0.01],
        _ => [0.01, 0.01, 0.005],
    }
}

fn template_phase(l: usize) -> f64 {
    let left = l >= 11 && l % 2 == 1;
    let leg = l >= 23;
    match (l >= 11, leg, left) {
        (false, _, _) => 0.0,
        // legs swing against each other, arms against the same-side leg
        (true, true, true) | (true, false, false) => 0.0,
        _ => PI,
    }
}

/// Draws a subject around the template walker. Deviations from the template
/// scale linearly with `separation`.
pub fn generate_subject(seed: u64, separation: f64) -> Result<SyntheticSubjectParams, SynthError> {
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(SynthError::Separation(separation));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n = || -> f64 { StandardNormal.sample(&mut rng) };
    let template = template_base();
    let mut base = Vec::with_capacity(NUM_LANDMARKS);
    let mut amplitude = Vec::with_capacity(NUM_LANDMARKS);
    let mut phase = Vec::with_capacity(NUM_LANDMARKS);
    for l in 0..NUM_LANDMARKS {
        let mut b = template[l];
        let mut a = template_amplitude(l);
        for c in 0..COORDS {
            b[c] += separation * 0.03 * n();
            a[c] = (a[c] + separation * 0.02 * n()).abs();
        }
        base.push(b);
        amplitude.push(a);
        phase.push(template_phase(l) + separation * 0.15 * n());
    }
    // keep the tracked foot clearly oscillating along x
    for l in 27..=32 {
        amplitude[l][0] = amplitude[l][0].max(0.1);
    }
    let frequency = (BASE_FREQUENCY * (1.0 + separation * 0.05 * n())).clamp(0.01, 0.1);
    Ok(SyntheticSubjectParams {
        subject_id: format!("synth{seed:04}"),
        amplitude,
        phase,
        frequency,
        base,
        noise_sigma: DEFAULT_NOISE_SIGMA,
        seed,
    })
}

/// Renders `t_len` frames. The walker starts at a random fraction of its
/// period, gets Gaussian noise, is turned `view_deg` about the vertical axis
/// and then optionally moved by `global_transform`.
pub fn generate_trajectory(
    subject: &SyntheticSubjectParams,
    t_len: usize,
    view_deg: f64,
    global_transform: Option<&SimilarityTransform>,
    seed: u64,
) -> Result<RawTrajectory, SynthError> {
    if t_len < 2 {
        return Err(SynthError::TooShort(t_len));
    }
    if global_transform.is_some_and(|t| t.dims() != 3) {
        return Err(SynthError::TransformDims);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0.0..subject.period());
    let noise = Normal::new(0.0, subject.noise_sigma).expect("sigma is non-negative");
    let (sin, cos) = view_deg.to_radians().sin_cos();
    let mut frames = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut pose = subject.pose_at(start + t as f64);
        for p in pose.iter_mut() {
            if subject.noise_sigma > 0.0 {
                for v in p.iter_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
            let [x, y, z] = *p;
            *p = [cos * x + sin * z, y, -sin * x + cos * z];
            if let Some(tr) = global_transform {
                let q = tr.apply_point(p);
                p.copy_from_slice(&q);
            }
        }
        frames.push(LandmarkFrame::new(pose)?);
    }
    Ok(RawTrajectory::new(
        subject.subject_id.clone(),
        view_deg,
        Condition::Nm,
        frames,
    )?)
}

/// A whole synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub subjects: usize,
    pub trajectories_per_subject: usize,
    pub frames: usize,
    pub separation: f64,
    pub noise_sigma: f64,
    /// Views cycled over each subject's trajectories.
    pub views: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: 20,
            trajectories_per_subject: 8,
            frames: 100,
            separation: 1.0,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            views: vec![0.0, 30.0, 60.0, 90.0],
            seed: 0,
        }
    }
}

/// Subjects are `subj000`, `subj001`, ...; each subject's trajectories are
/// contiguous and in generation order.
pub fn generate_cohort(cfg: &SynthConfig) -> Result<Vec<RawTrajectory>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let views = if cfg.views.is_empty() { vec![0.0] } else { cfg.views.clone() };
    let mut out = Vec::with_capacity(cfg.subjects * cfg.trajectories_per_subject);
    for s in 0..cfg.subjects {
        let subject = generate_subject(rng.random(), cfg.separation)?
            .with_noise(cfg.noise_sigma)
            .with_id(format!("subj{s:03}"));
        for k in 0..cfg.trajectories_per_subject {
            out.push(generate_trajectory(
                &subject,
                cfg.frames,
                views[k % views.len()],
                None,
                rng.random(),
            )?);
        }
    }
    Ok(out)
}
