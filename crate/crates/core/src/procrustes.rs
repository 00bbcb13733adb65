//! Ordinary and generalized Procrustes analysis.
//!
//! Shapes are `k × d` point configurations (rows are landmarks). A similarity
//! transform maps `X` to `c·X·O + 1·tᵀ` with `c > 0`, `O` a proper rotation and
//! `t` a translation. Reflections are never allowed; scaling is a flag.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GaitSequence, LandmarkFrame, LandmarkSubset, ModelError, RawTrajectory};

const ROTATION_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum ProcrustesError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("need at least two configurations, got {0}")]
    TooFewConfigs(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `k × d` landmark configuration; finite, `k ≥ d`, not all points equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ShapeConfig(DMatrix<f64>);

impl ShapeConfig {
    pub fn new(points: DMatrix<f64>) -> Result<Self, ProcrustesError> {
        let (k, d) = points.shape();
        if !(d == 2 || d == 3) {
            return Err(ProcrustesError::Dimension(format!("d = {d}, expected 2 or 3")));
        }
        if k < d {
            return Err(ProcrustesError::Dimension(format!("k = {k} < d = {d}")));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(ProcrustesError::Degenerate("non-finite coordinate".into()));
        }
        let first = points.row(0).clone_owned();
        if points.row_iter().all(|r| r == first) {
            return Err(ProcrustesError::Degenerate("all points identical".into()));
        }
        Ok(Self(points))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ProcrustesError> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(ProcrustesError::Dimension("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    /// The subset landmarks of a frame, keeping the first `dims` coordinates.
    pub fn from_frame(
        frame: &LandmarkFrame,
        subset: &LandmarkSubset,
        dims: usize,
    ) -> Result<Self, ProcrustesError> {
        if !(dims == 2 || dims == 3) {
            return Err(ProcrustesError::Dimension(format!("dims = {dims}")));
        }
        let idx = subset.indices();
        Self::new(DMatrix::from_fn(idx.len(), dims, |i, j| {
            frame.landmark(idx[i])[j]
        }))
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.nrows()
    }

    pub fn d(&self) -> usize {
        self.0.ncols()
    }

    pub fn centroid(&self) -> RowDVector<f64> {
        self.0.row_mean()
    }

    pub fn centered(&self) -> DMatrix<f64> {
        let c = self.centroid();
        let mut m = self.0.clone();
        for mut row in m.row_iter_mut() {
            row -= &c;
        }
        m
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for ShapeConfig {
    type Error = ProcrustesError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::from_rows(&rows)
    }
}

impl From<ShapeConfig> for Vec<Vec<f64>> {
    fn from(s: ShapeConfig) -> Self {
        s.to_rows()
    }
}

/// `X ↦ c·X·O + 1·tᵀ` with `c > 0` and `O` a proper rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTransform {
    scale: f64,
    rotation: DMatrix<f64>,
    translation: DVector<f64>,
}

impl SimilarityTransform {
    pub fn new(
        scale: f64,
        rotation: DMatrix<f64>,
        translation: DVector<f64>,
    ) -> Result<Self, ProcrustesError> {
        let d = rotation.nrows();
        if rotation.ncols() != d || translation.len() != d {
            return Err(ProcrustesError::Dimension(format!(
                "rotation {:?}, translation {}",
                rotation.shape(),
                translation.len()
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(ProcrustesError::InvalidTransform(format!("scale {scale}")));
        }
        if translation.iter().chain(rotation.iter()).any(|v| !v.is_finite()) {
            return Err(ProcrustesError::InvalidTransform("non-finite entry".into()));
        }
        let ortho = (rotation.transpose() * &rotation - DMatrix::identity(d, d)).norm();
        if ortho > ROTATION_TOL {
            return Err(ProcrustesError::InvalidTransform(format!(
                "rotation not orthogonal (|OᵀO - I| = {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(ProcrustesError::InvalidTransform(format!(
                "det(O) = {det}, reflections are not allowed"
            )));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            scale: 1.0,
            rotation: DMatrix::identity(d, d),
            translation: DVector::zeros(d),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &DVector<f64> {
        &self.translation
    }

    pub fn dims(&self) -> usize {
        self.rotation.nrows()
    }

    /// Maps one row-vector point.
    pub fn apply_point(&self, p: &[f64]) -> Vec<f64> {
        let d = self.dims();
        (0..d)
            .map(|j| {
                let rotated: f64 = (0..d).map(|i| p[i] * self.rotation[(i, j)]).sum();
                self.scale * rotated + self.translation[j]
            })
            .collect()
    }

    /// The transform undoing this one.
    pub fn inverse(&self) -> Self {
        let rot_t = self.rotation.transpose();
        let inv_scale = 1.0 / self.scale;
        let translation = -(rot_t.transpose() * &self.translation) * inv_scale;
        Self {
            scale: inv_scale,
            rotation: rot_t,
            translation,
        }
    }
}

/// Applies `c·X·O + 1·tᵀ`.
pub fn apply_transform(
    x: &ShapeConfig,
    t: &SimilarityTransform,
) -> Result<ShapeConfig, ProcrustesError> {
    if x.d() != t.dims() {
        return Err(ProcrustesError::Dimension(format!(
            "shape has d = {}, transform has d = {}",
            x.d(),
            t.dims()
        )));
    }
    let mut out = (x.points() * &t.rotation) * t.scale;
    let tr = t.translation.transpose();
    for mut row in out.row_iter_mut() {
        row += &tr;
    }
    ShapeConfig::new(out)
}

fn squared_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm_squared()
}

/// Least-squares similarity transform taking `x` onto `y`, with its residual
/// `‖c·X·O + 1·tᵀ − Y‖²`.
pub fn opa_fit(
    x: &ShapeConfig,
    y: &ShapeConfig,
    allow_scale: bool,
) -> Result<(SimilarityTransform, f64), ProcrustesError> {
    if x.points().shape() != y.points().shape() {
        return Err(ProcrustesError::Dimension(format!(
            "{:?} vs {:?}",
            x.points().shape(),
            y.points().shape()
        )));
    }
    let d = x.d();
    let xc = x.centered();
    let yc = y.centered();
    let x_norm2 = xc.norm_squared();
    if x_norm2 <= f64::MIN_POSITIVE {
        return Err(ProcrustesError::Degenerate("source has zero spread".into()));
    }

    let cross = xc.transpose() * &yc;
    let svd = cross.svd(true, true);
    let mut u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut sigma: Vec<f64> = svd.singular_values.iter().copied().collect();

    // Proper rotation only: flip the axis of the smallest singular value.
    if (&u * &v_t).determinant() < 0.0 {
        let smallest = (0..d)
            .min_by(|&a, &b| sigma[a].total_cmp(&sigma[b]))
            .expect("d >= 2");
        u.column_mut(smallest).neg_mut();
        sigma[smallest] = -sigma[smallest];
    }
    let rotation = u * v_t;

    let scale = if allow_scale {
        let s = sigma.iter().sum::<f64>() / x_norm2;
        if s <= 0.0 {
            return Err(ProcrustesError::Degenerate(
                "no positive scale aligns the shapes".into(),
            ));
        }
        s
    } else {
        1.0
    };

    let x_bar = x.centroid();
    let y_bar = y.centroid();
    let translation = (y_bar - (x_bar * &rotation) * scale).transpose();
    let transform = SimilarityTransform {
        scale,
        rotation,
        translation,
    };
    let fitted = apply_transform(x, &transform)?;
    let residual = squared_distance(fitted.points(), y.points());
    Ok((transform, residual))
}

/// Centered, unit Frobenius norm mean configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ShapeConfig", into = "ShapeConfig")]
pub struct MeanShape(ShapeConfig);

impl MeanShape {
    /// Centers and normalizes `shape`.
    pub fn normalize(shape: &ShapeConfig) -> Result<Self, ProcrustesError> {
        let c = shape.centered();
        let n = c.norm();
        if n <= f64::MIN_POSITIVE {
            return Err(ProcrustesError::Degenerate("zero-norm mean".into()));
        }
        Ok(Self(ShapeConfig::new(c / n)?))
    }

    pub fn shape(&self) -> &ShapeConfig {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.k()
    }

    pub fn d(&self) -> usize {
        self.0.d()
    }
}

impl TryFrom<ShapeConfig> for MeanShape {
    type Error = ProcrustesError;

    /// Keeps the values verbatim; they must already be centered and unit norm.
    fn try_from(s: ShapeConfig) -> Result<Self, Self::Error> {
        let off_center = s.centroid().norm();
        let norm = s.points().norm();
        if off_center > 1e-9 || (norm - 1.0).abs() > 1e-9 {
            return Err(ProcrustesError::Degenerate(format!(
                "mean shape not normalized (centroid {off_center:e}, norm {norm})"
            )));
        }
        Ok(Self(s))
    }
}

impl From<MeanShape> for ShapeConfig {
    fn from(m: MeanShape) -> Self {
        m.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpaOptions {
    /// Stop once the mean moves less than this (Frobenius) between iterations.
    pub tol: f64,
    pub max_iter: usize,
    pub allow_scale: bool,
}

impl Default for GpaOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 100,
            allow_scale: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpaResult {
    pub mean: MeanShape,
    /// Per-configuration transforms onto `mean`.
    pub transforms: Vec<SimilarityTransform>,
    /// `Σᵢ ‖aligned_i − mean‖²` after each iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    /// False when `max_iter` was reached first; the result is still usable.
    pub converged: bool,
}

impl GpaResult {
    pub fn objective(&self) -> f64 {
        self.history.last().copied().unwrap_or(0.0)
    }
}

/// Iterative generalized Procrustes fit.
///
/// Alternates between aligning every configuration to the current mean and
/// replacing the mean with the normalized average of the aligned
/// configurations. Both steps minimize the same objective (the normalized
/// average is the best unit-norm mean), so `history` never increases.
pub fn gpa_fit(configs: &[ShapeConfig], opts: &GpaOptions) -> Result<GpaResult, ProcrustesError> {
    if configs.len() < 2 {
        return Err(ProcrustesError::TooFewConfigs(configs.len()));
    }
    let shape = configs[0].points().shape();
    if let Some(bad) = configs.iter().find(|c| c.points().shape() != shape) {
        return Err(ProcrustesError::Dimension(format!(
            "{:?} vs {:?}",
            bad.points().shape(),
            shape
        )));
    }

    let mut mean = MeanShape::normalize(&configs[0])?;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut aligned = Vec::with_capacity(configs.len());
        let mut sum = DMatrix::zeros(shape.0, shape.1);
        for c in configs {
            let (t, _) = opa_fit(c, mean.shape(), opts.allow_scale)?;
            let a = apply_transform(c, &t)?;
            sum += a.points();
            aligned.push(a);
        }
        let new_mean = MeanShape::normalize(&ShapeConfig::new(sum / configs.len() as f64)?)?;
        let objective: f64 = aligned
            .iter()
            .map(|a| squared_distance(a.points(), new_mean.shape().points()))
            .sum();
        history.push(objective);
        let shift = (new_mean.shape().points() - mean.shape().points()).norm();
        mean = new_mean;
        if shift < opts.tol {
            converged = true;
            break;
        }
    }

    // Report transforms onto the final mean, not the previous iterate.
    let transforms = configs
        .iter()
        .map(|c| opa_fit(c, mean.shape(), opts.allow_scale).map(|(t, _)| t))
        .collect::<Result<_, _>>()?;
    Ok(GpaResult {
        mean,
        transforms,
        history,
        iterations,
        converged,
    })
}

/// Aligns one frame to `mean`. The transform is fitted on the subset
/// landmarks' first `mean.d()` coordinates and then applied to every landmark;
/// with `d = 2` the depth coordinate is left untouched.
pub fn align_frame(
    frame: &LandmarkFrame,
    mean: &MeanShape,
    subset: &LandmarkSubset,
    allow_scale: bool,
) -> Result<LandmarkFrame, ProcrustesError> {
    if mean.k() != subset.len() {
        return Err(ProcrustesError::Dimension(format!(
            "mean has {} landmarks, subset has {}",
            mean.k(),
            subset.len()
        )));
    }
    let d = mean.d();
    let x = ShapeConfig::from_frame(frame, subset, d)?;
    let (t, _) = opa_fit(&x, mean.shape(), allow_scale)?;
    Ok(frame.map_points(|_, p| {
        let q = t.apply_point(&p[..d]);
        let mut out = p;
        out[..d].copy_from_slice(&q);
        out
    })?)
}

/// Procrustes-aligns every frame of a sequence to the mean shape.
pub fn align_sequence(
    seq: &GaitSequence,
    mean: &MeanShape,
    subset: &LandmarkSubset,
    dims: usize,
    allow_scale: bool,
) -> Result<GaitSequence, ProcrustesError> {
    if dims != mean.d() {
        return Err(ProcrustesError::Dimension(format!(
            "mean is {}-dimensional, requested {dims}",
            mean.d()
        )));
    }
    let frames = seq
        .frames()
        .iter()
        .map(|f| align_frame(f, mean, subset, allow_scale))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(seq.with_frames(frames)?)
}

/// Procrustes-aligns every frame of a whole trajectory.
pub fn align_trajectory(
    traj: &RawTrajectory,
    mean: &MeanShape,
    subset: &LandmarkSubset,
    allow_scale: bool,
) -> Result<RawTrajectory, ProcrustesError> {
    let frames = traj
        .frames()
        .iter()
        .map(|f| align_frame(f, mean, subset, allow_scale))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(traj.with_frames(frames)?)
}

/// Fits the mean shape over every `stride`-th frame of the given trajectories.
pub fn fit_mean_shape(
    trajectories: &[RawTrajectory],
    subset: &LandmarkSubset,
    dims: usize,
    stride: usize,
    opts: &GpaOptions,
) -> Result<GpaResult, ProcrustesError> {
    let configs = trajectories
        .iter()
        .flat_map(|t| t.frames().iter().step_by(stride.max(1)))
        .map(|f| ShapeConfig::from_frame(f, subset, dims))
        .collect::<Result<Vec<_>, _>>()?;
    gpa_fit(&configs, opts)
}

/// Same as [`fit_mean_shape`] for already segmented sequences.
pub fn fit_mean_shape_from_sequences(
    sequences: &[GaitSequence],
    subset: &LandmarkSubset,
    dims: usize,
    opts: &GpaOptions,
) -> Result<GpaResult, ProcrustesError> {
    let configs = sequences
        .iter()
        .flat_map(|s| s.frames())
        .map(|f| ShapeConfig::from_frame(f, subset, dims))
        .collect::<Result<Vec<_>, _>>()?;
    gpa_fit(&configs, opts)
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use nalgebra::{Quaternion, UnitQuaternion};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub fn random_rotation(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
        if d == 2 {
            let a: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            DMatrix::from_row_slice(2, 2, &[a.cos(), -a.sin(), a.sin(), a.cos()])
        } else {
            let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
            let r = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
                .to_rotation_matrix();
            DMatrix::from_iterator(3, 3, r.matrix().iter().copied())
        }
    }

    pub fn random_transform(rng: &mut impl Rng, d: usize) -> SimilarityTransform {
        SimilarityTransform::new(
            rng.random_range(0.2..5.0),
            random_rotation(rng, d),
            DVector::from_fn(d, |_, _| rng.random_range(-10.0..10.0)),
        )
        .unwrap()
    }

    pub fn random_shape(rng: &mut impl Rng, k: usize, d: usize) -> ShapeConfig {
        ShapeConfig::new(DMatrix::from_fn(k, d, |_, _| StandardNormal.sample(rng))).unwrap()
    }
}
