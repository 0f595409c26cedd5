//! Euclidean distance matrices and coordinate recovery from distances.
//!
//! Two independent reconstructors are provided. [`reconstruct_incremental`]
//! builds coordinates one axis at a time: a greedily pivoted affine frame is
//! placed by intersecting spheres, and every other point is located by the
//! linear system obtained from subtracting sphere equations.
//! [`reconstruct_spectral`] is classical double-centering followed by an
//! eigendecomposition. Both recover the configuration up to an isometry.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::geometry::{ObjectId, View};
use crate::{Error, Result};

/// Square, symmetric, non-negative matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    entries: DMatrix<f64>,
}

impl DistanceMatrix {
    const SYMMETRY_TOL: f64 = 1e-12;

    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if entries.ncols() != n {
            return Err(Error::LengthMismatch { expected: n, found: entries.ncols() });
        }
        if !entries.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidArgument("distances must be finite and non-negative".into()));
        }
        let tol = Self::SYMMETRY_TOL * (1.0 + entries.max());
        for i in 0..n {
            if entries[(i, i)] > tol {
                return Err(Error::InvalidArgument(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..i {
                if (entries[(i, j)] - entries[(j, i)]).abs() > tol {
                    return Err(Error::InvalidArgument(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        let mut entries = entries;
        for i in 0..n {
            entries[(i, i)] = 0.0;
            for j in 0..i {
                let avg = 0.5 * (entries[(i, j)] + entries[(j, i)]);
                entries[(i, j)] = avg;
                entries[(j, i)] = avg;
            }
        }
        Ok(Self { entries })
    }

    /// Build from square row-major data.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::LengthMismatch { expected: n, found: r.len() });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Pairwise Euclidean distances of a point list.
    pub fn from_points(points: &[DVector<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        let dim = points[0].len();
        let n = points.len();
        let mut entries = DMatrix::zeros(n, n);
        for i in 0..n {
            if points[i].len() != dim {
                return Err(Error::LengthMismatch { expected: dim, found: points[i].len() });
            }
            for j in 0..i {
                let d = euclidean(points[i].as_slice(), points[j].as_slice());
                entries[(i, j)] = d;
                entries[(j, i)] = d;
            }
        }
        Ok(Self { entries })
    }

    pub fn from_views(views: &[View]) -> Result<Self> {
        let pts: Vec<DVector<f64>> = views.iter().map(View::to_dvector).collect();
        Self::from_points(&pts)
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.max()
    }

    /// Extend with one more point given its distances to the existing ones.
    pub fn with_point(&self, distances: &[f64]) -> Result<Self> {
        let n = self.size();
        if distances.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: distances.len() });
        }
        let mut entries = self.entries.clone().resize(n + 1, n + 1, 0.0);
        for (i, d) in distances.iter().enumerate() {
            entries[(i, n)] = *d;
            entries[(n, i)] = *d;
        }
        Self::new(entries)
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Euclidean distance between two views.
pub fn view_distance(a: &View, b: &View) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::LengthMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(euclidean(a.as_slice(), b.as_slice()))
}

/// Object label and per-object index of a stored training view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViewLabel {
    pub object: ObjectId,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledView {
    pub label: ViewLabel,
    pub view: View,
}

/// Everything a distance-only observer is allowed to read: the distances
/// among training views, the distances from the target to each training
/// view, and the training labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySet {
    base: DistanceMatrix,
    target: Vec<f64>,
    labels: Vec<ViewLabel>,
}

impl SimilaritySet {
    pub fn new(base: DistanceMatrix, target: Vec<f64>, labels: Vec<ViewLabel>) -> Result<Self> {
        let n = base.size();
        if target.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: target.len() });
        }
        if labels.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: labels.len() });
        }
        if !target.iter().all(|d| d.is_finite() && *d >= 0.0) {
            return Err(Error::InvalidArgument("target distances must be non-negative".into()));
        }
        let mut seen = labels.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != n {
            return Err(Error::InvalidArgument("duplicate view labels".into()));
        }
        Ok(Self { base, target, labels })
    }

    pub fn base(&self) -> &DistanceMatrix {
        &self.base
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn labels(&self) -> &[ViewLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Build the similarity set of `target` against a labeled model base.
pub fn similarity_set(target: &View, base: &[LabeledView]) -> Result<SimilaritySet> {
    if base.is_empty() {
        return Err(Error::EmptyInput);
    }
    let views: Vec<View> = base.iter().map(|lv| lv.view.clone()).collect();
    for v in &views {
        if v.dim() != target.dim() {
            return Err(Error::LengthMismatch { expected: target.dim(), found: v.dim() });
        }
    }
    let matrix = DistanceMatrix::from_views(&views)?;
    let target_d = views.iter().map(|v| view_distance(target, v)).collect::<Result<Vec<_>>>()?;
    SimilaritySet::new(matrix, target_d, base.iter().map(|lv| lv.label).collect())
}

/// Outcome of intersecting the sphere `|x| = r_a` with `|x - b| = r_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SphereIntersection {
    /// Points `lambda * b + q` with `q` orthogonal to `b` and `|q| = q_norm`.
    /// `q_norm == 0` is the tangent case.
    Points {
        lambda: f64,
        q_norm: f64,
    },
    Empty,
    /// Same center and radius.
    Coincident,
}

impl SphereIntersection {
    pub fn is_tangent(&self) -> bool {
        matches!(self, SphereIntersection::Points { q_norm, .. } if *q_norm == 0.0)
    }

    /// The intersection point whose orthogonal part points along `direction`.
    ///
    /// Returns `None` for empty or coincident spheres and when `direction` has
    /// no component orthogonal to `b` in a non-tangent case.
    pub fn point_toward(&self, b: &DVector<f64>, direction: &DVector<f64>) -> Option<DVector<f64>> {
        let SphereIntersection::Points { lambda, q_norm } = *self else {
            return None;
        };
        let base = b * lambda;
        if q_norm == 0.0 {
            return Some(base);
        }
        let bb = b.norm_squared();
        let q = direction - b * (direction.dot(b) / bb);
        let len = q.norm();
        if len <= 1e-12 * direction.norm().max(1e-300) {
            return None;
        }
        Some(base + q * (q_norm / len))
    }
}

/// Intersect the sphere of radius `r_a` about the origin with the sphere of
/// radius `r_b` about `center_b`.
///
/// Writing an intersection point as `lambda * b + q` with `q` orthogonal to
/// `b`, the two sphere equations give
/// `lambda = (r_a^2 - r_b^2 + |b|^2) / (2 |b|^2)` and
/// `|q|^2 = r_a^2 - lambda^2 |b|^2`.
pub fn sphere_intersect(center_b: &[f64], r_a: f64, r_b: f64) -> SphereIntersection {
    let bb: f64 = center_b.iter().map(|c| c * c).sum();
    let ra2 = r_a * r_a;
    let rb2 = r_b * r_b;
    let tol = 1e-12 * ra2.max(rb2).max(bb).max(1.0);
    if bb <= tol {
        return if (ra2 - rb2).abs() <= tol { SphereIntersection::Coincident } else { SphereIntersection::Empty };
    }
    let lambda = (ra2 - rb2 + bb) / (2.0 * bb);
    let h2 = ra2 - lambda * lambda * bb;
    if h2 < -tol {
        SphereIntersection::Empty
    } else if h2 <= tol {
        SphereIntersection::Points { lambda, q_norm: 0.0 }
    } else {
        SphereIntersection::Points { lambda, q_norm: h2.sqrt() }
    }
}

/// Tolerances for the reconstructors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructOptions {
    /// A pivot (or eigenvalue) below `rank_tol` times the squared diameter
    /// counts as zero.
    pub rank_tol: f64,
    /// Allowed distance residual, relative to `1 + max distance`.
    pub residual_tol: f64,
    /// Reject coincident points instead of placing them on top of each other.
    pub strict_distinct: bool,
    /// Stop opening axes when the configuration runs out of dimensions
    /// instead of failing.
    pub allow_rank_deficient: bool,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self { rank_tol: 1e-9, residual_tol: 1e-8, strict_distinct: false, allow_rank_deficient: false }
    }
}

/// Coordinates recovered from a distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    dim: usize,
    rank: usize,
    points: Vec<DVector<f64>>,
    quality: f64,
    frame: Vec<usize>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of axes actually opened; equals `dim` unless rank deficiency
    /// was allowed.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.dim
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<DVector<f64>> {
        self.points
    }

    /// Largest absolute difference between recomputed and input distances.
    pub fn quality(&self) -> f64 {
        self.quality
    }

    /// Indices of the points that opened the axes (empty for spectral).
    pub fn frame(&self) -> &[usize] {
        &self.frame
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn max_residual(points: &[DVector<f64>], d: &DistanceMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..points.len() {
        for j in 0..i {
            let r = ((&points[i] - &points[j]).norm() - d.get(i, j)).abs();
            worst = worst.max(r);
        }
    }
    worst
}

fn check_args(d: &DistanceMatrix, n: usize, opts: &ReconstructOptions) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("target dimension must be >= 1".into()));
    }
    if opts.strict_distinct {
        let size = d.size();
        for i in 0..size {
            for j in 0..i {
                if d.get(i, j) == 0.0 {
                    return Err(Error::DegenerateInput(format!("points {j} and {i} coincide")));
                }
            }
        }
    }
    if d.size() < n + 1 && !opts.allow_rank_deficient {
        return Err(Error::DegenerateInput(format!(
            "{} points cannot span an affine frame of R^{n}; need at least {}",
            d.size(),
            n + 1
        )));
    }
    Ok(())
}

fn finish(
    d: &DistanceMatrix,
    n: usize,
    rank: usize,
    points: Vec<DVector<f64>>,
    frame: Vec<usize>,
    opts: &ReconstructOptions,
) -> Result<Embedding> {
    let quality = max_residual(&points, d);
    let tolerance = opts.residual_tol * (1.0 + d.max_entry());
    if quality > tolerance {
        return Err(Error::InconsistentDistances { residual: quality, tolerance });
    }
    Ok(Embedding { dim: n, rank, points, quality, frame })
}

/// Reconstruct coordinates in `R^n` from distances, one axis at a time.
pub fn reconstruct_incremental(d: &DistanceMatrix, n: usize) -> Result<Embedding> {
    reconstruct_incremental_with(d, n, &ReconstructOptions::default())
}

pub fn reconstruct_incremental_with(d: &DistanceMatrix, n: usize, opts: &ReconstructOptions) -> Result<Embedding> {
    check_args(d, n, opts)?;
    let size = d.size();
    let sq = d.entries().map(|v| v * v);
    let scale2 = sq.max();

    // Point 0 sits at the origin. `height2[i]` is the squared distance of
    // point i from the span of the axes opened so far.
    let mut coords = vec![DVector::<f64>::zeros(n); size];
    let mut height2: Vec<f64> = (0..size).map(|i| sq[(0, i)]).collect();
    let mut in_frame = vec![false; size];
    in_frame[0] = true;
    let mut frame = vec![0usize];

    let mut rank = 0;
    for axis in 0..n {
        let pivot = (0..size).filter(|&i| !in_frame[i]).fold(None, |best: Option<usize>, i| match best {
            Some(b) if height2[b] >= height2[i] => Some(b),
            _ => Some(i),
        });
        let Some(pivot) = pivot.filter(|&p| height2[p] > opts.rank_tol * scale2) else {
            // Negative squared heights mean no Euclidean configuration fits.
            let deepest = (0..size).filter(|&i| !in_frame[i]).map(|i| height2[i]).fold(0.0, f64::min);
            if deepest < -opts.residual_tol * scale2 {
                return Err(Error::InconsistentDistances {
                    residual: (-deepest).sqrt(),
                    tolerance: opts.residual_tol * (1.0 + d.max_entry()),
                });
            }
            if opts.allow_rank_deficient {
                break;
            }
            return Err(Error::DegenerateInput(format!("configuration spans only {axis} of {n} dimensions")));
        };

        // The new axis opens in the positive direction; this fixes one
        // member of each mirror pair.
        let h = height2[pivot].sqrt();
        coords[pivot][axis] = h;
        height2[pivot] = 0.0;
        in_frame[pivot] = true;
        frame.push(pivot);
        rank += 1;

        // Subtracting the sphere about the origin from the sphere about the
        // pivot gives one more row of the triangular system
        // `pivot . x = (d0i^2 + d0p^2 - dip^2) / 2`; solve it for this axis.
        for i in 0..size {
            if in_frame[i] {
                continue;
            }
            let rhs = 0.5 * (sq[(0, i)] + sq[(0, pivot)] - sq[(i, pivot)]);
            let known: f64 = (0..axis).map(|b| coords[i][b] * coords[pivot][b]).sum();
            let x = (rhs - known) / h;
            coords[i][axis] = x;
            height2[i] -= x * x;
        }
    }

    finish(d, n, rank, coords, frame, opts)
}

/// Classical double-centering embedding: eigenvectors of `-1/2 J D^2 J`.
pub fn reconstruct_spectral(d: &DistanceMatrix, n: usize) -> Result<Embedding> {
    reconstruct_spectral_with(d, n, &ReconstructOptions::default())
}

pub fn reconstruct_spectral_with(d: &DistanceMatrix, n: usize, opts: &ReconstructOptions) -> Result<Embedding> {
    check_args(d, n, opts)?;
    let size = d.size();
    let sq = d.entries().map(|v| v * v);
    let row_means: Vec<f64> = (0..size).map(|i| sq.row(i).sum() / size as f64).collect();
    let grand = row_means.iter().sum::<f64>() / size as f64;
    let gram = DMatrix::from_fn(size, size, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));

    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let top = values[0].max(0.0);
    let cutoff = opts.rank_tol * top;

    if top <= 0.0 && !opts.allow_rank_deficient {
        return Err(Error::DegenerateInput("all points coincide".into()));
    }
    let rank = values.iter().take(n).filter(|&&v| v > cutoff).count();
    if rank < n.min(size) && !opts.allow_rank_deficient {
        return Err(Error::DegenerateInput(format!("configuration spans only {rank} of {n} dimensions")));
    }
    let residual_top = values.get(n).copied().unwrap_or(0.0);
    let bottom = *values.last().unwrap_or(&0.0);
    if residual_top > cutoff || bottom < -cutoff {
        let offending = if residual_top > cutoff { residual_top } else { bottom };
        return Err(Error::InconsistentDistances {
            residual: offending.abs() / top.max(f64::MIN_POSITIVE),
            tolerance: opts.rank_tol,
        });
    }

    let mut coords = vec![DVector::<f64>::zeros(n); size];
    for (axis, &idx) in order.iter().take(rank).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        // Deterministic sign: largest-magnitude component positive.
        let lead = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if lead < 0.0 {
            v.neg_mut();
        }
        let s = values[axis].sqrt();
        for i in 0..size {
            coords[i][axis] = s * v[i];
        }
    }

    finish(d, n, rank, coords, Vec::new(), opts)
}

/// Least-squares location of a point from its distances to `points`.
///
/// Returns the point and its squared height above the affine span of
/// `points` (zero for a full-dimensional, consistent base).
fn locate(points: &[DVector<f64>], distances: &[f64], rank_tol: f64) -> Result<(DVector<f64>, f64)> {
    let m = points.len();
    let n = points[0].len();
    let mut mean = DVector::zeros(n);
    for p in points {
        mean += p;
    }
    mean /= m as f64;
    let centered: Vec<DVector<f64>> = points.iter().map(|p| p - &mean).collect();
    let mean_c2 = centered.iter().map(|c| c.norm_squared()).sum::<f64>() / m as f64;
    let mean_d2 = distances.iter().map(|d| d * d).sum::<f64>() / m as f64;

    // |y - c_j|^2 = d_j^2 minus its average over j is linear in y.
    let a = DMatrix::from_fn(m, n, |j, c| 2.0 * centered[j][c]);
    let rhs = DVector::from_fn(m, |j, _| centered[j].norm_squared() - mean_c2 - distances[j] * distances[j] + mean_d2);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = rank_tol.sqrt() * smax.max(f64::MIN_POSITIVE);
    let y = svd.solve(&rhs, eps).map_err(|e| Error::SingularSystem(e.to_string()))?;
    let height2 = mean_d2 - mean_c2 - y.norm_squared();
    Ok((y + mean, height2))
}

/// Place an extra point given its distances to every point of `base`.
///
/// The base must be full-dimensional, which makes the solution unique.
pub fn embed_target(base: &Embedding, target_distances: &[f64]) -> Result<DVector<f64>> {
    embed_target_with(base, target_distances, &ReconstructOptions::default())
}

pub fn embed_target_with(
    base: &Embedding,
    target_distances: &[f64],
    opts: &ReconstructOptions,
) -> Result<DVector<f64>> {
    if base.is_empty() {
        return Err(Error::EmptyInput);
    }
    if target_distances.len() != base.len() {
        return Err(Error::LengthMismatch { expected: base.len(), found: target_distances.len() });
    }
    if !base.is_full_rank() {
        return Err(Error::DegenerateInput(format!("base spans {} of {} dimensions", base.rank(), base.dim())));
    }
    let (x, _) = locate(base.points(), target_distances, opts.rank_tol)?;
    let worst =
        base.points().iter().zip(target_distances).map(|(p, d)| ((&x - p).norm() - d).abs()).fold(0.0f64, f64::max);
    let maxd = target_distances.iter().copied().fold(0.0f64, f64::max);
    let tolerance = opts.residual_tol * (1.0 + maxd);
    if worst > tolerance {
        return Err(Error::InconsistentDistances { residual: worst, tolerance });
    }
    Ok(x)
}

/// Best-effort placement against a rank-deficient base: the in-span part
/// of the point, and the distance from the span that cannot be oriented.
pub fn embed_target_partial(base: &Embedding, target_distances: &[f64]) -> Result<(DVector<f64>, f64)> {
    if base.is_empty() {
        return Err(Error::EmptyInput);
    }
    if target_distances.len() != base.len() {
        return Err(Error::LengthMismatch { expected: base.len(), found: target_distances.len() });
    }
    let (x, h2) = locate(base.points(), target_distances, ReconstructOptions::default().rank_tol)?;
    Ok((x, h2.max(0.0).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::procrustes_align;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_points(n: usize, m: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = substream(seed, "edm-points");
        (0..m).map(|_| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))).collect()
    }

    fn pts(raw: &[&[f64]]) -> Vec<DVector<f64>> {
        raw.iter().map(|p| DVector::from_column_slice(p)).collect()
    }

    #[test]
    fn view_distance_cases() {
        let a = View::new(vec![0.0, 0.0]).unwrap();
        let b = View::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(view_distance(&a, &b).unwrap(), 5.0);
        assert_eq!(view_distance(&a, &a).unwrap(), 0.0);
        let c = View::new(vec![0.0; 4]).unwrap();
        assert!(matches!(view_distance(&a, &c), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn view_distance_matches_componentwise_sum() {
        let mut rng = substream(3, "vd");
        for _ in 0..100 {
            let a: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
            let mut acc = 0.0;
            for i in 0..8 {
                acc += (a[i] - b[i]).powi(2);
            }
            let d = view_distance(&View::new(a).unwrap(), &View::new(b).unwrap()).unwrap();
            assert!((d - acc.sqrt()).abs() <= 1e-14);
        }
    }

    fn lv(object: usize, index: usize, coords: Vec<f64>) -> LabeledView {
        LabeledView { label: ViewLabel { object: ObjectId(object), index }, view: View::new(coords).unwrap() }
    }

    #[test]
    fn similarity_set_small_cases() {
        let t = View::new(vec![0.0, 0.0]).unwrap();
        let s = similarity_set(&t, &[lv(0, 0, vec![0.0, 0.0])]).unwrap();
        assert_eq!(s.base().get(0, 0), 0.0);
        assert_eq!(s.target(), &[0.0]);

        let s = similarity_set(&t, &[lv(0, 0, vec![0.0, 0.0]), lv(1, 0, vec![3.0, 4.0])]).unwrap();
        assert_eq!(s.base().get(0, 1), 5.0);
        assert_eq!(s.target(), &[0.0, 5.0]);
        assert_eq!(s.labels()[1].object, ObjectId(1));
    }

    #[test]
    fn similarity_set_matches_recomputation() {
        let mut rng = substream(4, "ss");
        let base: Vec<LabeledView> =
            (0..10).map(|i| lv(i % 3, i / 3, (0..6).map(|_| rng.sample(StandardNormal)).collect())).collect();
        let target = View::new((0..6).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let s = similarity_set(&target, &base).unwrap();
        for i in 0..10 {
            assert_eq!(s.base().get(i, i), 0.0);
            assert_eq!(s.target()[i], view_distance(&target, &base[i].view).unwrap());
            for j in 0..10 {
                assert_eq!(s.base().get(i, j), s.base().get(j, i));
                assert_eq!(s.base().get(i, j), view_distance(&base[i].view, &base[j].view).unwrap());
            }
        }
        let short = View::new(vec![0.0; 4]).unwrap();
        assert!(matches!(similarity_set(&short, &base), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn distance_matrix_validation() {
        assert!(DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0])).is_err());
        assert!(DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0])).is_err());
        assert!(DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0])).is_err());
        assert!(DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).is_ok());
    }

    #[test]
    fn sphere_intersection_cases() {
        let b = [2.0, 0.0];
        match sphere_intersect(&b, 2f64.sqrt(), 2f64.sqrt()) {
            SphereIntersection::Points { lambda, q_norm } => {
                assert!((lambda - 0.5).abs() < 1e-15);
                assert!((q_norm - 1.0).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
        let bv = DVector::from_column_slice(&b);
        let up = sphere_intersect(&b, 2f64.sqrt(), 2f64.sqrt())
            .point_toward(&bv, &DVector::from_column_slice(&[0.0, 1.0]))
            .unwrap();
        assert!((up - DVector::from_column_slice(&[1.0, 1.0])).amax() < 1e-15);

        let tangent = sphere_intersect(&b, 1.0, 1.0);
        assert!(tangent.is_tangent());
        assert_eq!(tangent, SphereIntersection::Points { lambda: 0.5, q_norm: 0.0 });

        assert_eq!(sphere_intersect(&b, 0.5, 0.5), SphereIntersection::Empty);
        assert_eq!(sphere_intersect(&[0.0, 0.0], 1.0, 1.0), SphereIntersection::Coincident);
        assert_eq!(sphere_intersect(&[0.0, 0.0], 1.0, 2.0), SphereIntersection::Empty);
    }

    #[test]
    fn lambda_satisfies_both_sphere_equations() {
        let mut rng = substream(5, "spheres");
        let mut checked = 0;
        for _ in 0..2000 {
            let n = rng.random_range(2..6);
            let b = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let ra = rng.random_range(0.0..4.0);
            let rb = rng.random_range(0.0..4.0);
            let hit = sphere_intersect(b.as_slice(), ra, rb);
            let dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            if let Some(p) = hit.point_toward(&b, &dir) {
                assert!((p.norm() - ra).abs() <= 1e-10);
                assert!(((&p - &b).norm() - rb).abs() <= 1e-10);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn equilateral_and_square() {
        let tri =
            DistanceMatrix::new(DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0])).unwrap();
        for emb in [reconstruct_incremental(&tri, 2).unwrap(), reconstruct_spectral(&tri, 2).unwrap()] {
            let again = DistanceMatrix::from_points(emb.points()).unwrap();
            assert!((again.entries() - tri.entries()).amax() <= 1e-12);
        }
        let inc = reconstruct_incremental(&tri, 2).unwrap();
        assert_eq!(inc.points()[0], DVector::zeros(2));
        assert!((inc.points()[inc.frame()[1]][0] - 1.0).abs() < 1e-15);

        let r2 = 2f64.sqrt();
        let square = DistanceMatrix::new(DMatrix::from_row_slice(
            4,
            4,
            &[0.0, 1.0, r2, 1.0, 1.0, 0.0, 1.0, r2, r2, 1.0, 0.0, 1.0, 1.0, r2, 1.0, 0.0],
        ))
        .unwrap();
        let emb = reconstruct_incremental(&square, 2).unwrap();
        let again = DistanceMatrix::from_points(emb.points()).unwrap();
        assert!((again.entries() - square.entries()).amax() <= 1e-10);
    }

    #[test]
    fn incremental_round_trip_in_r6() {
        let p = gaussian_points(6, 12, 6);
        let d = DistanceMatrix::from_points(&p).unwrap();
        let emb = reconstruct_incremental(&d, 6).unwrap();
        let (_, res) = procrustes_align(emb.points(), &p, true).unwrap();
        assert!(res <= 1e-8, "residual {res}");
        assert_eq!(emb.frame().len(), 7);
    }

    #[test]
    fn spectral_gram_rank_property() {
        let p = gaussian_points(3, 9, 7);
        let d = DistanceMatrix::from_points(&p).unwrap();
        let sq = d.entries().map(|v| v * v);
        let n = 9;
        let j = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let gram = (&j * sq * &j) * -0.5;
        let mut ev: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        for v in &ev[3..] {
            assert!(v.abs() <= 1e-9 * ev[0]);
        }
        let emb = reconstruct_spectral(&d, 3).unwrap();
        assert!(emb.quality() <= 1e-10);
    }

    #[test]
    fn reflected_embedding_keeps_distances() {
        let p = gaussian_points(4, 8, 8);
        let d = DistanceMatrix::from_points(&p).unwrap();
        let emb = reconstruct_incremental(&d, 4).unwrap();
        for axis in 0..4 {
            let flipped: Vec<DVector<f64>> = emb
                .points()
                .iter()
                .map(|x| {
                    let mut y = x.clone();
                    y[axis] = -y[axis];
                    y
                })
                .collect();
            let df = DistanceMatrix::from_points(&flipped).unwrap();
            let de = DistanceMatrix::from_points(emb.points()).unwrap();
            assert!((df.entries() - de.entries()).amax() <= 1e-12);
        }
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let p = pts(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0], &[-0.5, -0.5]]);
        let d = DistanceMatrix::from_points(&p).unwrap();
        assert!(matches!(reconstruct_incremental(&d, 2), Err(Error::DegenerateInput(_))));
        assert!(matches!(reconstruct_spectral(&d, 2), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn too_few_points_are_degenerate() {
        let p = gaussian_points(3, 3, 9);
        let d = DistanceMatrix::from_points(&p).unwrap();
        assert!(matches!(reconstruct_incremental(&d, 3), Err(Error::DegenerateInput(_))));
        assert!(matches!(reconstruct_spectral(&d, 3), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn non_euclidean_input_is_inconsistent() {
        // Triangle inequality violated.
        let d = DistanceMatrix::new(DMatrix::from_row_slice(
            4,
            4,
            &[0.0, 1.0, 1.0, 5.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 5.0, 1.0, 1.0, 0.0],
        ))
        .unwrap();
        assert!(matches!(reconstruct_incremental(&d, 2), Err(Error::InconsistentDistances { .. })));
        assert!(matches!(reconstruct_spectral(&d, 2), Err(Error::InconsistentDistances { .. })));

        // Points that genuinely need three dimensions.
        let p = gaussian_points(3, 6, 10);
        let d = DistanceMatrix::from_points(&p).unwrap();
        assert!(matches!(reconstruct_incremental(&d, 2), Err(Error::InconsistentDistances { .. })));
        assert!(matches!(reconstruct_spectral(&d, 2), Err(Error::InconsistentDistances { .. })));
    }

    #[test]
    fn duplicates_coincide_unless_strict() {
        let mut p = gaussian_points(2, 4, 11);
        p.push(p[1].clone());
        let d = DistanceMatrix::from_points(&p).unwrap();
        let emb = reconstruct_incremental(&d, 2).unwrap();
        assert!((&emb.points()[1] - &emb.points()[4]).norm() <= 1e-12);
        let strict = ReconstructOptions { strict_distinct: true, ..Default::default() };
        assert!(matches!(reconstruct_incremental_with(&d, 2, &strict), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn rank_deficient_mode_reports_rank() {
        let p = gaussian_points(5, 4, 12);
        let d = DistanceMatrix::from_points(&p).unwrap();
        let opts = ReconstructOptions { allow_rank_deficient: true, ..Default::default() };
        let emb = reconstruct_incremental_with(&d, 5, &opts).unwrap();
        assert_eq!(emb.rank(), 3);
        assert!(!emb.is_full_rank());
        assert!(emb.quality() <= 1e-10);
        assert!(matches!(embed_target(&emb, &[1.0; 4]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn embed_target_cases() {
        let square = pts(&[&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]]);
        let d = DistanceMatrix::from_points(&square).unwrap();
        let emb = reconstruct_incremental(&d, 2).unwrap();
        let h = 0.5f64.sqrt();
        let c = embed_target(&emb, &[h, h, h, h]).unwrap();
        // The center is the mean of the reconstructed corners.
        let mean = emb.points().iter().fold(DVector::zeros(2), |a, p| a + p) / 4.0;
        assert!((c - mean).amax() <= 1e-12);

        for i in 0..4 {
            let dists: Vec<f64> = (0..4).map(|j| d.get(i, j)).collect();
            let x = embed_target(&emb, &dists).unwrap();
            assert!((x - &emb.points()[i]).amax() <= 1e-10);
        }
        assert!(matches!(embed_target(&emb, &[0.1, 5.0, 0.1, 5.0]), Err(Error::InconsistentDistances { .. })));
    }

    #[test]
    fn embed_target_round_trip_in_r6() {
        let all = gaussian_points(6, 14, 13);
        let (base, target) = all.split_at(13);
        let d = DistanceMatrix::from_points(base).unwrap();
        let emb = reconstruct_incremental(&d, 6).unwrap();
        let dists: Vec<f64> = base.iter().map(|p| (p - &target[0]).norm()).collect();
        let x = embed_target(&emb, &dists).unwrap();
        let (iso, _) = procrustes_align(emb.points(), base, true).unwrap();
        assert!((iso.apply(&x) - &target[0]).norm() <= 1e-8);
    }
}
