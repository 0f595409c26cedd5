//! Linear discriminants over Gaussian-kernel similarities.
//!
//! Each class score is `Phi_w(V) = sum_i alpha[w][i] * g(S(V, T_w,i))` with
//! `g(s) = exp(-s^2 / (2 h^2))`, summed over that class's training views.
//! The weights are ridge-regularized least squares against one-hot targets
//! over the whole training set.

use nalgebra::{DMatrix, DVector};

use crate::bayes::{ClassScore, Decision};
use crate::edm::{DistanceMatrix, SimilaritySet, ViewLabel};
use crate::geometry::ObjectId;
use crate::{Error, Result};

/// Default ridge penalty.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Trained kernel discriminant.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    bandwidth: f64,
    classes: Vec<ObjectId>,
    /// Training-view indices of each class, in base order.
    members: Vec<Vec<usize>>,
    /// One weight per (class, member view).
    alphas: Vec<Vec<f64>>,
    n_base: usize,
}

impl KernelWeights {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn classes(&self) -> &[ObjectId] {
        &self.classes
    }

    pub fn members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }

    pub fn alphas(&self, class: usize) -> &[f64] {
        &self.alphas[class]
    }

    pub fn alpha_norm(&self) -> f64 {
        self.alphas.iter().flatten().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Class scores for a point with the given distances to the training views.
    pub fn scores(&self, distances: &[f64]) -> Result<Vec<f64>> {
        if distances.len() != self.n_base {
            return Err(Error::LengthMismatch { expected: self.n_base, found: distances.len() });
        }
        Ok(self
            .members
            .iter()
            .zip(&self.alphas)
            .map(|(idx, a)| idx.iter().zip(a).map(|(&i, w)| w * self.g(distances[i])).sum())
            .collect())
    }

    fn g(&self, s: f64) -> f64 {
        (-s * s / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

/// Median of the off-diagonal distances.
pub fn median_pairwise_distance(d: &DistanceMatrix) -> Option<f64> {
    let n = d.size();
    let mut v: Vec<f64> = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| d.get(i, j)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Fit the kernel discriminant from training-view distances and labels.
/// `bandwidth = None` uses the median pairwise training distance.
pub fn train_kernel(
    base: &DistanceMatrix,
    labels: &[ViewLabel],
    bandwidth: Option<f64>,
    ridge: f64,
) -> Result<KernelWeights> {
    let n = base.size();
    if labels.len() != n {
        return Err(Error::LengthMismatch { expected: n, found: labels.len() });
    }
    if ridge.is_nan() || ridge < 0.0 || ridge.is_infinite() {
        return Err(Error::InvalidArgument(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let h = match bandwidth {
        Some(h) => h,
        None => median_pairwise_distance(base).unwrap_or(1.0),
    };
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }

    let mut classes: Vec<ObjectId> = labels.iter().map(|l| l.object).collect();
    classes.sort();
    classes.dedup();
    let members: Vec<Vec<usize>> =
        classes.iter().map(|c| (0..n).filter(|&i| labels[i].object == *c).collect()).collect();

    let mut w = KernelWeights { bandwidth: h, classes, members, alphas: Vec::new(), n_base: n };
    let gram = DMatrix::from_fn(n, n, |i, j| w.g(base.get(i, j)));
    for (c, idx) in w.classes.iter().zip(&w.members) {
        let k = gram.select_columns(idx);
        let y = DVector::from_fn(n, |i, _| if labels[i].object == *c { 1.0 } else { 0.0 });
        if ridge == 0.0 {
            let sv = k.singular_values();
            let smax = sv.max();
            if sv.min() <= 1e-12 * smax * n as f64 {
                return Err(Error::SingularSystem(format!("kernel Gram of class {c} is rank-deficient")));
            }
        }
        let normal = k.transpose() * &k + DMatrix::identity(idx.len(), idx.len()) * ridge;
        let chol = normal
            .cholesky()
            .ok_or_else(|| Error::SingularSystem(format!("normal equations of class {c} are singular")))?;
        w.alphas.push(chol.solve(&(k.transpose() * y)).iter().copied().collect());
    }
    Ok(w)
}

/// Arg-max of the class discriminants; ties go to the lowest class id.
pub fn score_kernel(s: &SimilaritySet, w: &KernelWeights) -> Result<Decision> {
    let scores = w.scores(s.target())?;
    Decision::from_scores(
        w.classes.iter().zip(scores).map(|(c, phi)| ClassScore { class: *c, log_posterior: phi }).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edm::similarity_set;
    use crate::edm::LabeledView;
    use crate::geometry::View;

    fn lv(object: usize, index: usize, coords: &[f64]) -> LabeledView {
        LabeledView { label: ViewLabel { object: ObjectId(object), index }, view: View::new(coords.to_vec()).unwrap() }
    }

    fn separable() -> Vec<LabeledView> {
        vec![lv(0, 0, &[0.0, 0.0]), lv(1, 0, &[10.0, 10.0])]
    }

    #[test]
    fn separable_views_classify_to_their_own_class() {
        let base = separable();
        let s = similarity_set(&base[0].view, &base).unwrap();
        let w = train_kernel(s.base(), s.labels(), Some(1.0), DEFAULT_RIDGE).unwrap();
        for (i, v) in base.iter().enumerate() {
            let s = similarity_set(&v.view, &base).unwrap();
            assert_eq!(score_kernel(&s, &w).unwrap().chosen, ObjectId(i));
        }
    }

    #[test]
    fn heavier_ridge_shrinks_weights() {
        let base = vec![lv(0, 0, &[0.0, 0.0]), lv(0, 1, &[0.5, 0.1]), lv(1, 0, &[1.0, 1.0]), lv(1, 1, &[1.2, 0.8])];
        let s = similarity_set(&base[0].view, &base).unwrap();
        let mut prev = f64::INFINITY;
        for ridge in [1e-6, 1e-3, 1.0, 1e3, 1e6, 1e12] {
            let norm = train_kernel(s.base(), s.labels(), None, ridge).unwrap().alpha_norm();
            assert!(norm < prev);
            prev = norm;
        }
        assert!(prev < 1e-9);
    }

    #[test]
    fn zero_ridge_duplicate_views_are_singular() {
        let base = vec![lv(0, 0, &[0.0, 0.0]), lv(0, 1, &[0.0, 0.0]), lv(1, 0, &[3.0, 0.0])];
        let s = similarity_set(&base[0].view, &base).unwrap();
        assert!(matches!(train_kernel(s.base(), s.labels(), Some(1.0), 0.0), Err(Error::SingularSystem(_))));
        assert!(train_kernel(s.base(), s.labels(), Some(1.0), 1e-3).is_ok());
    }

    #[test]
    fn validation() {
        let base = separable();
        let s = similarity_set(&base[0].view, &base).unwrap();
        assert!(train_kernel(s.base(), s.labels(), Some(0.0), 1.0).is_err());
        assert!(train_kernel(s.base(), s.labels(), Some(1.0), -1.0).is_err());
        assert!(train_kernel(s.base(), &s.labels()[..1], Some(1.0), 1.0).is_err());
        assert_eq!(median_pairwise_distance(s.base()), Some(200f64.sqrt()));
    }
}
