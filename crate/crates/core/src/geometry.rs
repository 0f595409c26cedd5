//! The generative world: point models, views, rotations, noise and isometries.
//!
//! Objects are ordered sets of `k` 3D feature points. A view is produced by a
//! uniformly random rotation, orthographic projection onto the x/y plane and
//! isotropic Gaussian noise on every image coordinate.

use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Identifier of an object class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub usize);

impl std::fmt::Display for ObjectId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An object model: `k` labeled 3D feature points in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet3D {
    points: Vec<Vector3<f64>>,
    label: ObjectId,
}

impl PointSet3D {
    pub fn new(points: Vec<Vector3<f64>>, label: ObjectId) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("model coordinates must be finite".into()));
        }
        Ok(Self { points, label })
    }

    pub fn from_coords(coords: &[[f64; 3]], label: ObjectId) -> Result<Self> {
        Self::new(coords.iter().map(|c| Vector3::new(c[0], c[1], c[2])).collect(), label)
    }

    pub fn k(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn label(&self) -> ObjectId {
        self.label
    }

    /// Apply a 3x3 linear map to every point.
    pub fn transformed(&self, m: &Matrix3<f64>) -> Self {
        Self { points: self.points.iter().map(|p| m * p).collect(), label: self.label }
    }
}

/// A 2D view: `k` image points flattened as `(x0, y0, x1, y1, ...)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct View(Vec<f64>);

impl View {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !coords.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("view length {} is not even", coords.len())));
        }
        if !coords.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("view coordinates must be finite".into()));
        }
        Ok(Self(coords))
    }

    pub fn from_dvector(v: &DVector<f64>) -> Result<Self> {
        Self::new(v.iter().copied().collect())
    }

    /// Number of feature points.
    pub fn k(&self) -> usize {
        self.0.len() / 2
    }

    /// Dimension of the view vector, `2k`.
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        [self.0[2 * i], self.0[2 * i + 1]]
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A proper rotation of 3-space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    const TOL: f64 = 1e-12;

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        if ortho > Self::TOL || (det - 1.0).abs() > Self::TOL {
            return Err(Error::InvalidArgument(format!("not a rotation: orthogonality error {ortho:e}, det {det}")));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(axis);
        Self(*nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix())
    }

    /// `exp` of the skew matrix of `w`.
    pub fn from_scaled_axis(w: Vector3<f64>) -> Self {
        Self(*nalgebra::Rotation3::from_scaled_axis(w).matrix())
    }

    pub(crate) fn from_unit_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Self(*q.to_rotation_matrix().matrix())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Re-project onto the rotation group after many compositions.
    pub(crate) fn renormalized(&self) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        Self::from_unit_quaternion(&q)
    }
}

impl std::ops::Mul for Rotation3 {
    type Output = Rotation3;

    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

/// Isotropic Gaussian imaging noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("noise sigma must be > 0, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    /// Zero-noise mode for deterministic tests.
    pub fn deterministic() -> Self {
        Self { sigma: 0.0 }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// An isometry of `R^n`: `x -> ortho * x + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsometryN {
    ortho: DMatrix<f64>,
    translation: DVector<f64>,
}

impl IsometryN {
    const TOL: f64 = 1e-10;

    pub fn new(ortho: DMatrix<f64>, translation: DVector<f64>) -> Result<Self> {
        let n = ortho.nrows();
        if ortho.ncols() != n {
            return Err(Error::InvalidArgument("orthogonal part must be square".into()));
        }
        if translation.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: translation.len() });
        }
        let err = (ortho.transpose() * &ortho - DMatrix::identity(n, n)).amax();
        if err > Self::TOL {
            return Err(Error::InvalidArgument(format!("orthogonality error {err:e} exceeds {:e}", Self::TOL)));
        }
        Ok(Self { ortho, translation })
    }

    pub fn identity(n: usize) -> Self {
        Self { ortho: DMatrix::identity(n, n), translation: DVector::zeros(n) }
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    pub fn ortho(&self) -> &DMatrix<f64> {
        &self.ortho
    }

    pub fn translation(&self) -> &DVector<f64> {
        &self.translation
    }

    /// True when the orthogonal part has determinant -1.
    pub fn is_reflection(&self) -> bool {
        self.ortho.determinant() < 0.0
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.ortho * x + &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.ortho.transpose();
        let t = -(&rt * &self.translation);
        Self { ortho: rt, translation: t }
    }
}

/// Priors of the generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    class_prior: Vec<f64>,
    model_tau: f64,
    noise: NoiseModel,
}

impl Priors {
    pub fn new(class_prior: Vec<f64>, model_tau: f64, noise: NoiseModel) -> Result<Self> {
        if class_prior.is_empty() {
            return Err(Error::EmptyInput);
        }
        if class_prior.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument("class priors must be non-negative".into()));
        }
        let sum: f64 = class_prior.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("class priors sum to {sum}, not 1")));
        }
        if !(model_tau.is_finite() && model_tau >= 0.0) {
            return Err(Error::InvalidArgument(format!("model tau must be >= 0, got {model_tau}")));
        }
        Ok(Self { class_prior, model_tau, noise })
    }

    pub fn uniform(n_classes: usize, model_tau: f64, noise: NoiseModel) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::EmptyInput);
        }
        Self::new(vec![1.0 / n_classes as f64; n_classes], model_tau, noise)
    }

    pub fn class_prior(&self) -> &[f64] {
        &self.class_prior
    }

    pub fn n_classes(&self) -> usize {
        self.class_prior.len()
    }

    pub fn model_tau(&self) -> f64 {
        self.model_tau
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn with_noise(&self, noise: NoiseModel) -> Self {
        Self { noise, ..self.clone() }
    }
}

/// Haar-uniform rotation from a normalized 4D Gaussian quaternion.
pub fn sample_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation3 {
    loop {
        let w: f64 = rng.sample(StandardNormal);
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let q = Quaternion::new(w, x, y, z);
        if q.norm() > 1e-12 {
            return Rotation3::from_unit_quaternion(&UnitQuaternion::from_quaternion(q));
        }
    }
}

/// Rotate then drop depth. Point `i` lands at view coordinates `2i, 2i+1`.
pub fn project(model: &PointSet3D, rot: &Rotation3) -> View {
    let r = rot.matrix();
    let mut coords = Vec::with_capacity(2 * model.k());
    for p in model.points() {
        coords.push(r[(0, 0)] * p.x + r[(0, 1)] * p.y + r[(0, 2)] * p.z);
        coords.push(r[(1, 0)] * p.x + r[(1, 1)] * p.y + r[(1, 2)] * p.z);
    }
    View(coords)
}

/// Perturb every coordinate with independent `N(0, sigma^2)` noise.
///
/// A zero-sigma noise model returns the input unchanged and draws nothing.
pub fn add_noise<R: Rng + ?Sized>(view: &View, noise: &NoiseModel, rng: &mut R) -> View {
    if noise.sigma() == 0.0 {
        return view.clone();
    }
    View(
        view.0
            .iter()
            .map(|c| {
                let e: f64 = rng.sample(StandardNormal);
                c + noise.sigma() * e
            })
            .collect(),
    )
}

/// Draw a model with i.i.d. `N(0, tau^2)` coordinates.
pub fn sample_model<R: Rng + ?Sized>(priors: &Priors, k: usize, label: ObjectId, rng: &mut R) -> PointSet3D {
    assert!(k >= 1, "a model needs at least one point");
    let tau = priors.model_tau();
    let points = (0..k)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            let z: f64 = rng.sample(StandardNormal);
            Vector3::new(tau * x, tau * y, tau * z)
        })
        .collect();
    PointSet3D { points, label }
}

fn centroid(points: &[DVector<f64>]) -> DVector<f64> {
    let mut c = DVector::zeros(points[0].len());
    for p in points {
        c += p;
    }
    c / points.len() as f64
}

/// Best isometry mapping `source` onto `target` in the least-squares sense.
///
/// Returns the isometry together with the RMS distance between the mapped
/// source points and the targets. With `allow_reflection == false` the
/// orthogonal part is restricted to determinant +1.
pub fn procrustes_align(
    source: &[DVector<f64>],
    target: &[DVector<f64>],
    allow_reflection: bool,
) -> Result<(IsometryN, f64)> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput);
    }
    if source.len() != target.len() {
        return Err(Error::LengthMismatch { expected: source.len(), found: target.len() });
    }
    let n = source[0].len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    for p in source.iter().chain(target) {
        if p.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: p.len() });
        }
    }

    let cs = centroid(source);
    let ct = centroid(target);
    let mut h = DMatrix::<f64>::zeros(n, n);
    for (s, t) in source.iter().zip(target) {
        h += (t - &ct) * (s - &cs).transpose();
    }

    let svd = h.svd(true, true);
    let mut u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    if !allow_reflection && (&u * &v_t).determinant() < 0.0 {
        let weakest =
            svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(n - 1);
        u.column_mut(weakest).neg_mut();
    }
    let ortho = u * v_t;
    let translation = &ct - &ortho * &cs;
    let iso = IsometryN { ortho, translation };

    let sq: f64 = source.iter().zip(target).map(|(s, t)| (iso.apply(s) - t).norm_squared()).sum();
    Ok((iso, (sq / source.len() as f64).sqrt()))
}
