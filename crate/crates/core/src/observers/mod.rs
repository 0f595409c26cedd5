//! Observers: decision rules with different access to the training data.
//!
//! * [`Observer3d`] sees view coordinates and runs the full Bayesian rule.
//! * [`StronglyTwoD`] sees only distances (plus a few anchor coordinates),
//!   rebuilds the views from them and then runs the very same rule.
//! * [`observer_nn`] and [`score_kernel`] are similarity-only baselines.
//! * [`MapObserver`] plugs a single reconstructed model into the
//!   known-model likelihood.
//! * [`InterleaveObserver`] decides from digit-interleaved pair codes.
//!
//! Trained observers keep their per-class state and answer queries by trial
//! index. Observers that share a Monte-Carlo label draw from the same
//! substreams, so paired observers see identical random numbers.

pub mod codec;
pub mod kernel;

pub use codec::{decode_mu, mu_similarity, FixedPointCodec};
pub use kernel::{median_pairwise_distance, score_kernel, train_kernel, KernelWeights};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bayes::{
    decide, likelihood_known_model, map_model_estimate_with, ClassScore, Decision, MapEstimate, MapOptions,
    ModelPosterior, MonteCarloParams,
};
use crate::edm::{
    embed_target, embed_target_partial, reconstruct_incremental, reconstruct_incremental_with, DistanceMatrix,
    Embedding, LabeledView, ReconstructOptions, SimilaritySet, ViewLabel,
};
use crate::geometry::{procrustes_align, IsometryN, ObjectId, PointSet3D, Priors, View};
use crate::rng::{counted, CountingRng, Stream};
use crate::{Error, Result};

/// Substream that weighs class `class`'s prior model draws.
pub fn posterior_stream(mc: &MonteCarloParams, seed: u64, class: ObjectId) -> CountingRng<Stream> {
    counted(seed, &format!("{}/class/{}/posterior", mc.stream_label, class))
}

/// Substream for the likelihood of trial `trial` under class `class`.
pub fn predictive_stream(mc: &MonteCarloParams, seed: u64, trial: u64, class: ObjectId) -> CountingRng<Stream> {
    counted(seed, &format!("{}/trial/{}/class/{}/predictive", mc.stream_label, trial, class))
}

fn map_stream(mc: &MonteCarloParams, seed: u64, class: ObjectId) -> CountingRng<Stream> {
    counted(seed, &format!("{}/class/{}/map", mc.stream_label, class))
}

/// Labeled training views of every class.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBase {
    views: Vec<LabeledView>,
    n_classes: usize,
}

impl ModelBase {
    pub fn new(views: Vec<LabeledView>, n_classes: usize) -> Result<Self> {
        let Some(first) = views.first() else {
            return Err(Error::EmptyInput);
        };
        let dim = first.view.dim();
        for v in &views {
            if v.view.dim() != dim {
                return Err(Error::LengthMismatch { expected: dim, found: v.view.dim() });
            }
            if v.label.object.0 >= n_classes {
                return Err(Error::InvalidArgument(format!(
                    "view labeled {} but only {n_classes} classes",
                    v.label.object
                )));
            }
        }
        let mut labels: Vec<ViewLabel> = views.iter().map(|v| v.label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != views.len() {
            return Err(Error::InvalidArgument("duplicate view labels".into()));
        }
        Ok(Self { views, n_classes })
    }

    pub fn views(&self) -> &[LabeledView] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn k(&self) -> usize {
        self.views[0].view.k()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> Vec<ViewLabel> {
        self.views.iter().map(|v| v.label).collect()
    }

    pub fn class_views(&self, class: ObjectId) -> Vec<View> {
        self.views.iter().filter(|v| v.label.object == class).map(|v| v.view.clone()).collect()
    }

    pub fn distance_matrix(&self) -> Result<DistanceMatrix> {
        DistanceMatrix::from_views(&self.views.iter().map(|v| v.view.clone()).collect::<Vec<_>>())
    }

    /// Snap every view onto the codec grid.
    pub fn quantized(&self, codec: &FixedPointCodec) -> Result<Self> {
        let views = self
            .views
            .iter()
            .map(|v| Ok(LabeledView { label: v.label, view: codec.quantize_view(&v.view)? }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(views, self.n_classes)
    }
}

fn check_classes(priors: &Priors, n_classes: usize) -> Result<()> {
    if priors.n_classes() != n_classes {
        return Err(Error::LengthMismatch { expected: n_classes, found: priors.n_classes() });
    }
    Ok(())
}

/// A decision and the number of random words each class query consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Traced {
    pub decision: Decision,
    pub draws: Vec<u64>,
}

/// The full-information Bayesian observer.
#[derive(Debug, Clone)]
pub struct Observer3d {
    posteriors: Vec<ModelPosterior>,
    training_draws: Vec<u64>,
    priors: Priors,
    mc: MonteCarloParams,
    seed: u64,
}

impl Observer3d {
    pub fn train(base: &ModelBase, priors: &Priors, mc: &MonteCarloParams, seed: u64) -> Result<Self> {
        check_classes(priors, base.n_classes())?;
        mc.validate()?;
        let k = base.k();
        let fitted = (0..base.n_classes())
            .into_par_iter()
            .map(|c| {
                let class = ObjectId(c);
                let mut rng = posterior_stream(mc, seed, class);
                let post = ModelPosterior::fit(&base.class_views(class), k, priors, mc, &mut rng)?;
                Ok((post, rng.words()))
            })
            .collect::<Result<Vec<_>>>()?;
        let (posteriors, training_draws) = fitted.into_iter().unzip();
        Ok(Self { posteriors, training_draws, priors: priors.clone(), mc: mc.clone(), seed })
    }

    /// Random words consumed while weighing each class's model draws.
    pub fn training_draws(&self) -> &[u64] {
        &self.training_draws
    }

    pub fn posteriors(&self) -> &[ModelPosterior] {
        &self.posteriors
    }

    pub fn decide(&self, v: &View, trial: u64) -> Result<Decision> {
        Ok(self.decide_traced(v, trial)?.decision)
    }

    pub fn decide_traced(&self, v: &View, trial: u64) -> Result<Traced> {
        let mut table = BTreeMap::new();
        let mut draws = Vec::with_capacity(self.posteriors.len());
        for (c, post) in self.posteriors.iter().enumerate() {
            let class = ObjectId(c);
            let mut rng = predictive_stream(&self.mc, self.seed, trial, class);
            table.insert(class, post.predictive(v, &mut rng)?);
            draws.push(rng.words());
        }
        Ok(Traced { decision: decide(&table, &self.priors)?, draws })
    }
}

/// One-shot [`Observer3d`] decision for trial `trial`.
pub fn observer_3d(
    v: &View,
    base: &ModelBase,
    priors: &Priors,
    mc: &MonteCarloParams,
    seed: u64,
    trial: u64,
) -> Result<Decision> {
    Observer3d::train(base, priors, mc, seed)?.decide(v, trial)
}

/// Training views whose true coordinates the distance-only observer may use
/// to pin down the unknown isometry.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorInfo {
    indices: Vec<usize>,
    coords: Vec<View>,
    degraded: bool,
}

impl AnchorInfo {
    /// `indices` point into a base of `n_base` training views.
    pub fn new(indices: Vec<usize>, coords: Vec<View>, n_base: usize) -> Result<Self> {
        if indices.len() != coords.len() {
            return Err(Error::LengthMismatch { expected: indices.len(), found: coords.len() });
        }
        let Some(first) = coords.first() else {
            return Err(Error::EmptyInput);
        };
        let dim = first.dim();
        for c in &coords {
            if c.dim() != dim {
                return Err(Error::LengthMismatch { expected: dim, found: c.dim() });
            }
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != indices.len() || sorted.last().is_some_and(|&i| i >= n_base) {
            return Err(Error::InvalidArgument("anchor indices must be distinct base positions".into()));
        }
        let required = (dim + 1).min(n_base);
        if indices.len() < required {
            return Err(Error::InvalidArgument(format!(
                "{} anchors given, at least {required} required",
                indices.len()
            )));
        }
        let degraded = n_base < dim + 1;
        if !degraded {
            let rank = affine_rank(&coords);
            if rank < dim {
                return Err(Error::DegenerateInput(format!("anchors span {rank} of {dim} dimensions")));
            }
        }
        Ok(Self { indices, coords, degraded })
    }

    /// The first `min(2k+1, N)` views of `base`.
    pub fn from_base(base: &ModelBase) -> Result<Self> {
        let count = (2 * base.k() + 1).min(base.len());
        let coords = base.views()[..count].iter().map(|v| v.view.clone()).collect();
        Self::new((0..count).collect(), coords, base.len())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn coords(&self) -> &[View] {
        &self.coords
    }

    pub fn k(&self) -> usize {
        self.coords[0].k()
    }

    /// Fewer than `2k+1` base views exist, so the isometry is underdetermined.
    pub fn is_degraded(&self) -> bool {
        self.degraded
    }

    /// Largest absolute anchor coordinate.
    pub fn scale(&self) -> f64 {
        self.coords.iter().flat_map(|c| c.as_slice()).fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

fn affine_rank(coords: &[View]) -> usize {
    let dim = coords[0].dim();
    let n = coords.len() as f64;
    let mean = coords.iter().fold(DVector::zeros(dim), |acc, c| acc + c.to_dvector()) / n;
    let centered = DMatrix::from_fn(dim, coords.len(), |i, j| coords[j].as_slice()[i] - mean[i]);
    let sv = centered.singular_values();
    let smax = sv.max();
    sv.iter().filter(|s| **s > 1e-9 * smax).count()
}

/// The distance-only observer.
///
/// Training rebuilds the base views from their distance matrix, recovers the
/// isometry separating the rebuilt frame from the original one by aligning
/// the anchors, and trains an [`Observer3d`] on the restored views. Queries
/// place the target from its distances, restore it the same way and defer
/// to the inner observer. Only distances, labels and anchors are read.
#[derive(Debug, Clone)]
pub struct StronglyTwoD {
    embedding: Embedding,
    alignment: IsometryN,
    anchor_residual: f64,
    restored: Vec<View>,
    inner: Observer3d,
    degraded: bool,
}

impl StronglyTwoD {
    pub fn train(
        base: &DistanceMatrix,
        labels: &[ViewLabel],
        anchors: &AnchorInfo,
        priors: &Priors,
        mc: &MonteCarloParams,
        seed: u64,
    ) -> Result<Self> {
        let n_base = base.size();
        if labels.len() != n_base {
            return Err(Error::LengthMismatch { expected: n_base, found: labels.len() });
        }
        if anchors.indices().iter().any(|&i| i >= n_base) {
            return Err(Error::InvalidArgument("anchor index outside the base".into()));
        }
        let dim = 2 * anchors.k();
        let degraded = n_base < dim + 1;
        let embedding = if degraded {
            let opts = ReconstructOptions { allow_rank_deficient: true, ..Default::default() };
            reconstruct_incremental_with(base, dim, &opts)?
        } else {
            reconstruct_incremental(base, dim)?
        };

        let rebuilt: Vec<DVector<f64>> = anchors.indices().iter().map(|&i| embedding.points()[i].clone()).collect();
        let truth: Vec<DVector<f64>> = anchors.coords().iter().map(View::to_dvector).collect();
        let (alignment, anchor_residual) = procrustes_align(&rebuilt, &truth, true)?;
        let tolerance = 1e-6 * (1.0 + anchors.scale());
        if anchor_residual > tolerance {
            return Err(Error::AnchorMismatch { residual: anchor_residual, tolerance });
        }

        let restored =
            embedding.points().iter().map(|p| View::from_dvector(&alignment.apply(p))).collect::<Result<Vec<_>>>()?;
        let views = labels
            .iter()
            .zip(&restored)
            .map(|(label, view)| LabeledView { label: *label, view: view.clone() })
            .collect();
        let inner = Observer3d::train(&ModelBase::new(views, priors.n_classes())?, priors, mc, seed)?;
        Ok(Self { embedding, alignment, anchor_residual, restored, inner, degraded })
    }

    /// Base views in original coordinates, rebuilt from distances.
    pub fn restored_views(&self) -> &[View] {
        &self.restored
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn alignment(&self) -> &IsometryN {
        &self.alignment
    }

    pub fn anchor_residual(&self) -> f64 {
        self.anchor_residual
    }

    pub fn is_degraded(&self) -> bool {
        self.degraded
    }

    pub fn inner(&self) -> &Observer3d {
        &self.inner
    }

    /// The target view in original coordinates, from its distances alone.
    pub fn restore_target(&self, target_distances: &[f64]) -> Result<View> {
        let x = if self.degraded {
            embed_target_partial(&self.embedding, target_distances)?.0
        } else {
            embed_target(&self.embedding, target_distances)?
        };
        View::from_dvector(&self.alignment.apply(&x))
    }

    pub fn decide(&self, target_distances: &[f64], trial: u64) -> Result<Decision> {
        Ok(self.decide_traced(target_distances, trial)?.decision)
    }

    pub fn decide_traced(&self, target_distances: &[f64], trial: u64) -> Result<Traced> {
        let v = self.restore_target(target_distances)?;
        let mut traced = self.inner.decide_traced(&v, trial)?;
        traced.decision.flags.degraded = self.degraded;
        Ok(traced)
    }
}

/// One-shot [`StronglyTwoD`] decision for trial `trial`.
pub fn observer_strongly_2d(
    s: &SimilaritySet,
    anchors: &AnchorInfo,
    priors: &Priors,
    mc: &MonteCarloParams,
    seed: u64,
    trial: u64,
) -> Result<Decision> {
    StronglyTwoD::train(s.base(), s.labels(), anchors, priors, mc, seed)?.decide(s.target(), trial)
}

/// Label of the closest training view. Class scores are the negated
/// distance to each class's closest view; ties go to the lowest view index.
pub fn observer_nn(s: &SimilaritySet) -> Decision {
    let target = s.target();
    let labels = s.labels();
    let mut nearest = 0;
    for (i, d) in target.iter().enumerate() {
        if *d < target[nearest] {
            nearest = i;
        }
    }
    let mut best: BTreeMap<ObjectId, f64> = BTreeMap::new();
    for (label, d) in labels.iter().zip(target) {
        let e = best.entry(label.object).or_insert(f64::INFINITY);
        *e = e.min(*d);
    }
    let chosen = labels[nearest].object;
    let top = -target[nearest];
    let second = best.iter().filter(|(c, _)| **c != chosen).map(|(_, d)| -d).fold(f64::NEG_INFINITY, f64::max);
    Decision {
        chosen,
        log_posteriors: best.into_iter().map(|(class, d)| ClassScore { class, log_posterior: -d }).collect(),
        margin: if second == f64::NEG_INFINITY { f64::INFINITY } else { top - second },
        flags: Default::default(),
    }
}

/// Known-model likelihoods at each class's MAP model.
#[derive(Debug, Clone)]
pub struct MapObserver {
    estimates: Vec<Option<MapEstimate>>,
    models: Vec<PointSet3D>,
    priors: Priors,
    mc: MonteCarloParams,
    seed: u64,
}

impl MapObserver {
    pub fn train(
        base: &ModelBase,
        priors: &Priors,
        mc: &MonteCarloParams,
        seed: u64,
        opts: &MapOptions,
    ) -> Result<Self> {
        check_classes(priors, base.n_classes())?;
        mc.validate()?;
        let k = base.k();
        let fitted = (0..base.n_classes())
            .into_par_iter()
            .map(|c| {
                let class = ObjectId(c);
                let views = base.class_views(class);
                if views.is_empty() {
                    // No data: the prior mode.
                    let zero = PointSet3D::from_coords(&vec![[0.0; 3]; k], class)?;
                    return Ok((None, zero));
                }
                let est = map_model_estimate_with(&views, priors, opts, &mut map_stream(mc, seed, class))?;
                let model = est.model.clone();
                Ok((Some(est), model))
            })
            .collect::<Result<Vec<_>>>()?;
        let (estimates, models) = fitted.into_iter().unzip();
        Ok(Self { estimates, models, priors: priors.clone(), mc: mc.clone(), seed })
    }

    pub fn estimates(&self) -> &[Option<MapEstimate>] {
        &self.estimates
    }

    pub fn models(&self) -> &[PointSet3D] {
        &self.models
    }

    pub fn decide(&self, v: &View, trial: u64) -> Result<Decision> {
        let mut table = BTreeMap::new();
        for (c, m) in self.models.iter().enumerate() {
            let class = ObjectId(c);
            let mut rng = predictive_stream(&self.mc, self.seed, trial, class);
            table.insert(class, likelihood_known_model(v, m, &self.priors, &self.mc, &mut rng)?);
        }
        decide(&table, &self.priors)
    }
}

/// Interleaved codes `mu(v, t)` of `v` against every base view, in base order.
pub fn mu_values(v: &View, base: &ModelBase, codec: &FixedPointCodec) -> Result<Vec<String>> {
    base.views().iter().map(|t| mu_similarity(v, &t.view, codec)).collect()
}

/// Decide from interleaved codes alone: decode every `mu(v, t_i)`, rebuild
/// the target and the base, and run the full-information rule on them.
#[allow(clippy::too_many_arguments)]
pub fn observer_interleave(
    mus: &[String],
    labels: &[ViewLabel],
    k: usize,
    codec: &FixedPointCodec,
    priors: &Priors,
    mc: &MonteCarloParams,
    seed: u64,
    trial: u64,
) -> Result<Decision> {
    let (v, base) = decode_trial(mus, labels, k, codec, priors.n_classes())?;
    observer_3d(&v, &base, priors, mc, seed, trial)
}

fn decode_trial(
    mus: &[String],
    labels: &[ViewLabel],
    k: usize,
    codec: &FixedPointCodec,
    n_classes: usize,
) -> Result<(View, ModelBase)> {
    if mus.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: labels.len(), found: mus.len() });
    }
    let mut target: Option<View> = None;
    let mut views = Vec::with_capacity(mus.len());
    for (mu, label) in mus.iter().zip(labels) {
        let (v, t) = decode_mu(mu, k, codec)?;
        match &target {
            None => target = Some(v),
            Some(prev) if *prev != v => {
                return Err(Error::InvalidArgument("codes disagree about the target view".into()));
            }
            Some(_) => {}
        }
        views.push(LabeledView { label: *label, view: t });
    }
    let target = target.ok_or(Error::EmptyInput)?;
    Ok((target, ModelBase::new(views, n_classes)?))
}

/// [`observer_interleave`] with the training side prepared once: the base is
/// snapped to the codec grid and weighed up front, and each query must carry
/// codes whose training halves reproduce that base exactly.
#[derive(Debug, Clone)]
pub struct InterleaveObserver {
    codec: FixedPointCodec,
    base: ModelBase,
    inner: Observer3d,
}

impl InterleaveObserver {
    pub fn train(
        base: &ModelBase,
        codec: &FixedPointCodec,
        priors: &Priors,
        mc: &MonteCarloParams,
        seed: u64,
    ) -> Result<Self> {
        let base = base.quantized(codec)?;
        let inner = Observer3d::train(&base, priors, mc, seed)?;
        Ok(Self { codec: *codec, base, inner })
    }

    /// The grid-snapped base that codes must be formed against.
    pub fn base(&self) -> &ModelBase {
        &self.base
    }

    pub fn codec(&self) -> &FixedPointCodec {
        &self.codec
    }

    pub fn decide_from_mu(&self, mus: &[String], trial: u64) -> Result<Decision> {
        let (v, decoded) = decode_trial(mus, &self.base.labels(), self.base.k(), &self.codec, self.base.n_classes())?;
        if decoded != self.base {
            return Err(Error::InvalidArgument("codes do not match the trained base".into()));
        }
        self.inner.decide(&v, trial)
    }

    /// Snap `v` to the grid, form its codes and decide from them.
    pub fn decide(&self, v: &View, trial: u64) -> Result<Decision> {
        let q = self.codec.quantize_view(v)?;
        self.decide_from_mu(&mu_values(&q, &self.base, &self.codec)?, trial)
    }
}
