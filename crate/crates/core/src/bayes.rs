//! Likelihoods and the arg-max posterior decision rule.
//!
//! All integrals are estimated by Monte Carlo in log space:
//!
//! * [`likelihood_known_model`] averages the Gaussian image density over
//!   Haar-random rotations of a known model.
//! * [`likelihood_from_training`] additionally integrates over the unknown
//!   model, importance-sampling models from the prior and weighting them by
//!   how well they explain the training views.
//! * [`likelihood_map_model`] plugs a single MAP model estimate into the
//!   known-model likelihood.
//!
//! Training and query work are split in [`ModelPosterior`] so an observer can
//! weigh its prior draws once and then answer many queries.

use std::collections::BTreeMap;

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{sample_model, sample_rotation, ObjectId, PointSet3D, Priors, Rotation3, View};
use crate::{Error, Result};

/// `exp(x)` underflows to exactly zero below this.
const UNDERFLOW: f64 = -746.0;

/// Sample budgets for the Monte-Carlo integrals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloParams {
    /// Haar rotations per likelihood evaluation.
    pub rotation_samples: usize,
    /// Prior model draws for the latent-model integral.
    pub model_samples: usize,
    /// Prefix for every derived random substream.
    pub stream_label: String,
}

impl Default for MonteCarloParams {
    fn default() -> Self {
        Self { rotation_samples: 4096, model_samples: 512, stream_label: "mc".into() }
    }
}

impl MonteCarloParams {
    pub fn new(rotation_samples: usize, model_samples: usize, stream_label: &str) -> Result<Self> {
        let p = Self { rotation_samples, model_samples, stream_label: stream_label.into() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotation_samples == 0 || self.model_samples == 0 {
            return Err(Error::InvalidArgument("sample counts must be >= 1".into()));
        }
        if self.stream_label.is_empty() {
            return Err(Error::InvalidArgument("stream label must be nonempty".into()));
        }
        Ok(())
    }
}

/// Monte-Carlo estimate of a class-conditional density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodEstimate {
    /// Natural log of the density estimate; `-inf` when everything underflowed.
    #[serde(with = "crate::serde_ext::float")]
    pub log_value: f64,
    /// Delta-method standard error of `log_value`.
    pub std_error: f64,
    pub rotation_samples: usize,
    pub model_samples: usize,
    /// `sum(w) / max(w)` over the model weights; equals `model_samples` when
    /// there is no training data and 1 for a known model.
    pub effective_samples: f64,
    pub underflow: bool,
    /// Fewer than two effective model samples; the estimate is unreliable.
    pub ess_collapse: bool,
}

/// Flags attached to a decision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionFlags {
    /// Every likelihood underflowed; the decision is the prior arg-max.
    pub prior_fallback: bool,
    /// Produced without the information needed for an optimal decision.
    pub degraded: bool,
    /// At least one class estimate had collapsed importance weights.
    pub ess_collapse: bool,
    /// The observer failed; the decision is the prior arg-max.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: ObjectId,
    #[serde(with = "crate::serde_ext::float")]
    pub log_posterior: f64,
}

/// Outcome of the arg-max rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub chosen: ObjectId,
    /// Unnormalized log posteriors in class order.
    pub log_posteriors: Vec<ClassScore>,
    /// Best minus second-best log posterior; `inf` with a single class.
    #[serde(with = "crate::serde_ext::float")]
    pub margin: f64,
    pub flags: DecisionFlags,
}

impl Decision {
    /// Pick the arg-max of `scores`, ties going to the lowest class id.
    pub(crate) fn from_scores(scores: Vec<ClassScore>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            let b = &scores[best];
            if s.log_posterior > b.log_posterior || (s.log_posterior == b.log_posterior && s.class < b.class) {
                best = i;
            }
        }
        let second = scores
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != best)
            .map(|(_, s)| s.log_posterior)
            .fold(f64::NEG_INFINITY, f64::max);
        let top = scores[best].log_posterior;
        let margin = if second == f64::NEG_INFINITY { f64::INFINITY } else { top - second };
        Ok(Self { chosen: scores[best].class, log_posteriors: scores, margin, flags: DecisionFlags::default() })
    }

    /// Prior arg-max, used when nothing better is available.
    pub fn prior_fallback(priors: &Priors) -> Self {
        let scores = priors
            .class_prior()
            .iter()
            .enumerate()
            .map(|(i, p)| ClassScore { class: ObjectId(i), log_posterior: p.ln() })
            .collect();
        let mut d = Self::from_scores(scores).expect("priors are nonempty");
        d.flags.prior_fallback = true;
        d
    }

    pub fn log_posterior(&self, class: ObjectId) -> Option<f64> {
        self.log_posteriors.iter().find(|s| s.class == class).map(|s| s.log_posterior)
    }
}

/// D(V) = arg max over classes of `log P(V|class) + log P(class)`.
pub fn decide(per_class: &BTreeMap<ObjectId, LikelihoodEstimate>, priors: &Priors) -> Result<Decision> {
    if per_class.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut scores = Vec::with_capacity(per_class.len());
    for (class, est) in per_class {
        let prior = priors
            .class_prior()
            .get(class.0)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no class prior for object {class}")))?;
        scores.push(ClassScore { class: *class, log_posterior: est.log_value + prior.ln() });
    }
    let ess_collapse = per_class.values().any(|e| e.ess_collapse);
    if per_class.values().all(|e| e.log_value == f64::NEG_INFINITY) {
        let mut d = Decision::prior_fallback(priors);
        d.flags.ess_collapse = ess_collapse;
        return Ok(d);
    }
    let mut d = Decision::from_scores(scores)?;
    d.flags.ess_collapse = ess_collapse;
    Ok(d)
}

/// The top two rows of a batch of rotations; enough to project.
#[derive(Debug, Clone)]
pub struct RotationBank {
    rows: Vec<[f64; 6]>,
}

impl RotationBank {
    pub fn draw<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Self {
        let rows = (0..count)
            .map(|_| {
                let m = *sample_rotation(rng).matrix();
                [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)]]
            })
            .collect();
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Project `model` under every rotation into `out` (row-major, `2k` per rotation).
    fn project_all(&self, model: &PointSet3D, out: &mut Vec<f64>) {
        out.clear();
        for r in &self.rows {
            for p in model.points() {
                out.push(r[0] * p.x + r[1] * p.y + r[2] * p.z);
                out.push(r[3] * p.x + r[4] * p.y + r[5] * p.z);
            }
        }
    }
}

/// Gaussian log-density constants for `dim` coordinates at noise `sigma`.
#[derive(Debug, Clone, Copy)]
struct GaussianKernel {
    inv_two_var: f64,
    log_norm: f64,
}

impl GaussianKernel {
    fn new(sigma: f64, dim: usize) -> Self {
        let var = sigma * sigma;
        Self { inv_two_var: 0.5 / var, log_norm: -0.5 * dim as f64 * (2.0 * std::f64::consts::PI * var).ln() }
    }

    /// Largest possible log-density (zero residual).
    fn log_peak(&self) -> f64 {
        self.log_norm
    }
}

/// `log(mean(exp(values)))` and the relative standard error of the mean.
fn log_mean_exp(values: &[f64]) -> (f64, f64) {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return (f64::NEG_INFINITY, 0.0);
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for v in values {
        let z = v - m;
        if z > UNDERFLOW {
            let e = z.exp();
            s1 += e;
            s2 += e * e;
        }
    }
    let n = values.len() as f64;
    let mean = s1 / n;
    let rel = if values.len() > 1 {
        let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
        (var / n).sqrt() / mean
    } else {
        0.0
    };
    (m + mean.ln(), rel)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Log integrand for each projection block against one view.
fn log_integrands(view: &[f64], projections: &[f64], kernel: GaussianKernel, out: &mut Vec<f64>) {
    let dim = view.len();
    out.clear();
    for block in projections.chunks_exact(dim) {
        let mut d2 = 0.0;
        for (a, b) in view.iter().zip(block) {
            let e = a - b;
            d2 += e * e;
        }
        out.push(kernel.log_norm - d2 * kernel.inv_two_var);
    }
}

fn check_view(v: &View, k: usize) -> Result<()> {
    if v.k() != k {
        return Err(Error::LengthMismatch { expected: 2 * k, found: v.dim() });
    }
    Ok(())
}

fn underflow_estimate(rotation_samples: usize, model_samples: usize) -> LikelihoodEstimate {
    LikelihoodEstimate {
        log_value: f64::NEG_INFINITY,
        std_error: 0.0,
        rotation_samples,
        model_samples,
        effective_samples: 0.0,
        underflow: true,
        ess_collapse: false,
    }
}

fn known_model_with_bank(v: &View, m: &PointSet3D, sigma: f64, bank: &RotationBank) -> LikelihoodEstimate {
    if sigma == 0.0 {
        return underflow_estimate(bank.len(), 1);
    }
    let kernel = GaussianKernel::new(sigma, v.dim());
    let mut proj = Vec::new();
    bank.project_all(m, &mut proj);
    let mut lg = Vec::new();
    log_integrands(v.as_slice(), &proj, kernel, &mut lg);
    let (log_value, rel) = log_mean_exp(&lg);
    LikelihoodEstimate {
        log_value,
        std_error: rel,
        rotation_samples: bank.len(),
        model_samples: 1,
        effective_samples: 1.0,
        underflow: log_value == f64::NEG_INFINITY,
        ess_collapse: false,
    }
}

/// P(V | M) averaged over `rotation_samples` Haar rotations.
pub fn likelihood_known_model<R: Rng + ?Sized>(
    v: &View,
    m: &PointSet3D,
    priors: &Priors,
    mc: &MonteCarloParams,
    rng: &mut R,
) -> Result<LikelihoodEstimate> {
    mc.validate()?;
    check_view(v, m.k())?;
    let bank = RotationBank::draw(mc.rotation_samples, rng);
    Ok(known_model_with_bank(v, m, priors.noise().sigma(), &bank))
}

/// Prior model draws weighted by how well they explain a training set.
///
/// The weights realize `P(M | training) ~ P(training | M) P(M)` without ever
/// forming the posterior explicitly.
#[derive(Debug, Clone)]
pub struct ModelPosterior {
    models: Vec<PointSet3D>,
    log_weights: Vec<f64>,
    /// Model indices by decreasing weight.
    order: Vec<usize>,
    log_weight_total: f64,
    effective_samples: f64,
    sigma: f64,
    rotation_samples: usize,
}

impl ModelPosterior {
    /// Draw `model_samples` prior models and one rotation bank, then weigh
    /// every model by its estimated training-view likelihoods.
    pub fn fit<R: Rng + ?Sized>(
        training: &[View],
        k: usize,
        priors: &Priors,
        mc: &MonteCarloParams,
        rng: &mut R,
    ) -> Result<Self> {
        mc.validate()?;
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        for t in training {
            check_view(t, k)?;
        }
        let sigma = priors.noise().sigma();
        let models: Vec<PointSet3D> =
            (0..mc.model_samples).map(|_| sample_model(priors, k, ObjectId(0), rng)).collect();
        let bank = RotationBank::draw(mc.rotation_samples, rng);

        let log_weights: Vec<f64> = if training.is_empty() {
            vec![0.0; models.len()]
        } else if sigma == 0.0 {
            vec![f64::NEG_INFINITY; models.len()]
        } else {
            let kernel = GaussianKernel::new(sigma, 2 * k);
            let mut proj = Vec::new();
            let mut lg = Vec::new();
            models
                .iter()
                .map(|m| {
                    bank.project_all(m, &mut proj);
                    training
                        .iter()
                        .map(|t| {
                            log_integrands(t.as_slice(), &proj, kernel, &mut lg);
                            log_mean_exp(&lg).0
                        })
                        .sum()
                })
                .collect()
        };

        let mut order: Vec<usize> = (0..models.len()).collect();
        order.sort_by(|&a, &b| log_weights[b].total_cmp(&log_weights[a]).then(a.cmp(&b)));
        let log_weight_total = log_sum_exp(log_weights.iter().copied());
        let top = log_weights[order[0]];
        let effective_samples =
            if top == f64::NEG_INFINITY { 0.0 } else { log_weights.iter().map(|lw| (lw - top).exp()).sum() };
        Ok(Self {
            models,
            log_weights,
            order,
            log_weight_total,
            effective_samples,
            sigma,
            rotation_samples: mc.rotation_samples,
        })
    }

    /// `sum(w) / max(w)` over the model weights.
    pub fn effective_samples(&self) -> f64 {
        self.effective_samples
    }

    pub fn ess_collapsed(&self) -> bool {
        self.effective_samples < 2.0
    }

    pub fn models(&self) -> &[PointSet3D] {
        &self.models
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Posterior predictive density of `v`: the weighted average of the
    /// per-model rotation integrals, using a fresh rotation bank from `rng`.
    pub fn predictive<R: Rng + ?Sized>(&self, v: &View, rng: &mut R) -> Result<LikelihoodEstimate> {
        let k = self.models[0].k();
        check_view(v, k)?;
        let bank = RotationBank::draw(self.rotation_samples, rng);
        let n_models = self.models.len();
        if self.sigma == 0.0 || self.log_weight_total == f64::NEG_INFINITY {
            return Ok(underflow_estimate(self.rotation_samples, n_models));
        }
        let kernel = GaussianKernel::new(self.sigma, v.dim());

        // Walk models by decreasing weight. Once a model's weight times the
        // largest possible density is 2^-1076 below the best term found so
        // far, it and every later model contribute exactly zero.
        let mut proj = Vec::new();
        let mut lg = Vec::new();
        let mut terms: Vec<(usize, f64)> = Vec::new();
        let mut best = f64::NEG_INFINITY;
        for &s in &self.order {
            let lw = self.log_weights[s];
            if lw + kernel.log_peak() < best + UNDERFLOW {
                break;
            }
            bank.project_all(&self.models[s], &mut proj);
            log_integrands(v.as_slice(), &proj, kernel, &mut lg);
            let lv = log_mean_exp(&lg).0;
            best = best.max(lw + lv);
            terms.push((s, lv));
        }

        let log_num = log_sum_exp(terms.iter().map(|&(s, lv)| self.log_weights[s] + lv));
        let log_value = log_num - self.log_weight_total;
        let underflow = log_value == f64::NEG_INFINITY;

        // Delta method for a self-normalized ratio:
        // var(log R) ~ sum_s wn_s^2 (L_s / R - 1)^2. Skipped models have
        // L_s / R indistinguishable from zero.
        let mut var = 0.0;
        if !underflow {
            let mut seen = vec![false; n_models];
            for &(s, lv) in &terms {
                seen[s] = true;
                let wn = (self.log_weights[s] - self.log_weight_total).exp();
                let ratio = (lv - log_value).exp();
                var += (wn * (ratio - 1.0)).powi(2);
            }
            for (s, lw) in self.log_weights.iter().enumerate() {
                if !seen[s] {
                    var += (lw - self.log_weight_total).exp().powi(2);
                }
            }
        }
        Ok(LikelihoodEstimate {
            log_value,
            std_error: var.sqrt(),
            rotation_samples: self.rotation_samples,
            model_samples: n_models,
            effective_samples: self.effective_samples,
            underflow,
            ess_collapse: self.ess_collapsed(),
        })
    }
}

/// P(V | training views), integrating over rotations and the latent model.
pub fn likelihood_from_training<R: Rng + ?Sized>(
    v: &View,
    training: &[View],
    priors: &Priors,
    mc: &MonteCarloParams,
    rng: &mut R,
) -> Result<LikelihoodEstimate> {
    ModelPosterior::fit(training, v.k(), priors, mc, rng)?.predictive(v, rng)
}

/// Settings for [`map_model_estimate_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct MapOptions {
    /// Alternation sweeps per restart.
    pub iters: usize,
    pub restarts: usize,
    /// Haar candidates tried per view and sweep before polishing.
    pub rotation_candidates: usize,
    /// Relative objective improvement below which a restart has converged.
    pub tol: f64,
    /// Rotations for the first restart; random when absent.
    pub initial_rotations: Option<Vec<Rotation3>>,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self { iters: 50, restarts: 8, rotation_candidates: 16, tol: 1e-10, initial_rotations: None }
    }
}

/// A MAP structure estimate with the per-view rotations that go with it.
#[derive(Debug, Clone)]
pub struct MapEstimate {
    pub model: PointSet3D,
    pub rotations: Vec<Rotation3>,
    /// Log-posterior (up to a constant) after each sweep of the winning restart.
    pub objective_trace: Vec<f64>,
    /// False when the improvement had not stalled when iterations ran out.
    pub converged: bool,
}

impl MapEstimate {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NEG_INFINITY)
    }
}

fn view_points(v: &View) -> Vec<Vector2<f64>> {
    (0..v.k()).map(|i| Vector2::from(v.point(i))).collect()
}

fn top_rows(r: &Rotation3) -> Matrix2x3<f64> {
    r.matrix().fixed_rows::<2>(0).into_owned()
}

fn view_sse(t: &[Vector2<f64>], r: &Rotation3, m: &[Vector3<f64>]) -> f64 {
    let p = top_rows(r);
    t.iter().zip(m).map(|(ti, mi)| (ti - p * mi).norm_squared()).sum()
}

/// Levenberg-Marquardt polish of one view's rotation. Never increases the
/// squared error.
fn polish_rotation(t: &[Vector2<f64>], m: &[Vector3<f64>], start: Rotation3) -> (Rotation3, f64) {
    let mut r = start;
    let mut cost = view_sse(t, &r, m);
    let mut mu = 1e-3;
    for _ in 0..100 {
        let p = top_rows(&r);
        let mut h = Matrix3::<f64>::zeros();
        let mut g = Vector3::<f64>::zeros();
        for (ti, mi) in t.iter().zip(m) {
            let x = r.matrix() * mi;
            let res = ti - p * mi;
            // d(residual)/d(omega) for R <- exp(omega) R.
            let j = Matrix2x3::new(0.0, -x.z, x.y, x.z, 0.0, -x.x);
            h += j.transpose() * j;
            g += j.transpose() * res;
        }
        let mut improved = false;
        for _ in 0..8 {
            let damped = h + Matrix3::from_diagonal_element(mu * (1.0 + h.trace() / 3.0));
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                mu *= 10.0;
                continue;
            };
            let cand = (Rotation3::from_scaled_axis(step) * r).renormalized();
            let c = view_sse(t, &cand, m);
            if c < cost {
                let gain = cost - c;
                r = cand;
                cost = c;
                mu = (mu / 3.0).max(1e-12);
                improved = gain > 1e-15 * (1.0 + cost) && step.norm() > 1e-14;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (r, cost)
}

/// Best rotation aligning `model` with `view`: Haar candidates plus the
/// starting point, followed by a local polish. Returns the rotation and the
/// RMS image residual per coordinate.
pub fn fit_rotation<R: Rng + ?Sized>(
    view: &View,
    model: &PointSet3D,
    candidates: usize,
    start: Option<Rotation3>,
    rng: &mut R,
) -> Result<(Rotation3, f64)> {
    check_view(view, model.k())?;
    let t = view_points(view);
    let m = model.points();
    let (r, sse) = best_rotation(&t, m, start, candidates, rng);
    Ok((r, (sse / view.dim() as f64).sqrt()))
}

fn best_rotation<R: Rng + ?Sized>(
    t: &[Vector2<f64>],
    m: &[Vector3<f64>],
    start: Option<Rotation3>,
    candidates: usize,
    rng: &mut R,
) -> (Rotation3, f64) {
    let mut best = start.unwrap_or_else(|| sample_rotation(rng));
    let mut best_cost = view_sse(t, &best, m);
    for _ in 0..candidates {
        let c = sample_rotation(rng);
        let cost = view_sse(t, &c, m);
        if cost < best_cost {
            best = c;
            best_cost = cost;
        }
    }
    polish_rotation(t, m, best)
}

struct MapProblem {
    views: Vec<Vec<Vector2<f64>>>,
    k: usize,
    /// sigma^2 / tau^2; the prior's weight relative to the image residuals.
    ridge: f64,
    inv_var: f64,
    inv_tau2: f64,
}

impl MapProblem {
    fn objective(&self, m: &[Vector3<f64>], rots: &[Rotation3]) -> f64 {
        let sse: f64 = self.views.iter().zip(rots).map(|(t, r)| view_sse(t, r, m)).sum();
        let norm: f64 = m.iter().map(|p| p.norm_squared()).sum();
        -0.5 * (sse * self.inv_var + norm * self.inv_tau2)
    }

    /// Exact maximizer over structure given rotations: one 3x3 ridge system
    /// shared by all points.
    fn structure_step(&self, rots: &[Rotation3]) -> Vec<Vector3<f64>> {
        let mut a = Matrix3::<f64>::from_diagonal_element(self.ridge);
        for r in rots {
            let p = top_rows(r);
            a += p.transpose() * p;
        }
        let solver =
            a.try_inverse().unwrap_or_else(|| a.pseudo_inverse(1e-14).expect("pseudo-inverse of a 3x3 matrix"));
        (0..self.k)
            .map(|i| {
                let mut b = Vector3::zeros();
                for (t, r) in self.views.iter().zip(rots) {
                    b += top_rows(r).transpose() * t[i];
                }
                if self.ridge.is_infinite() {
                    Vector3::zeros()
                } else {
                    solver * b
                }
            })
            .collect()
    }
}

/// MAP reconstruction of a 3D model from its training views.
pub fn map_model_estimate<R: Rng + ?Sized>(
    training: &[View],
    priors: &Priors,
    iters: usize,
    rng: &mut R,
) -> Result<MapEstimate> {
    map_model_estimate_with(training, priors, &MapOptions { iters, ..Default::default() }, rng)
}

/// Points, rotations, objective trace and convergence of one restart.
type Candidate = (Vec<Vector3<f64>>, Vec<Rotation3>, Vec<f64>, bool);

/// Alternating maximization of `prod_j P(T_j | M, R_j) P(M)`.
///
/// Given rotations the structure is a ridge-regularized least-squares
/// solution; given the structure each rotation is improved by a candidate
/// search and a local polish that only accepts improvements, so the objective
/// never decreases. The best of several random restarts is returned, with
/// the gauge fixed so that the first view's rotation is the identity and the
/// depth-reflection ambiguity resolved by making the first non-flat point's
/// depth positive.
pub fn map_model_estimate_with<R: Rng + ?Sized>(
    training: &[View],
    priors: &Priors,
    opts: &MapOptions,
    rng: &mut R,
) -> Result<MapEstimate> {
    if training.is_empty() {
        return Err(Error::EmptyInput);
    }
    let k = training[0].k();
    for t in training {
        check_view(t, k)?;
    }
    if let Some(init) = &opts.initial_rotations {
        if init.len() != training.len() {
            return Err(Error::LengthMismatch { expected: training.len(), found: init.len() });
        }
    }
    let sigma = priors.noise().sigma();
    let tau = priors.model_tau();
    // Zero noise is treated as plain maximum likelihood at unit scale.
    let (inv_var, ridge, inv_tau2) = if sigma == 0.0 {
        (1.0, 0.0, 0.0)
    } else if tau == 0.0 {
        (1.0 / (sigma * sigma), f64::INFINITY, 0.0)
    } else {
        (1.0 / (sigma * sigma), (sigma / tau).powi(2), 1.0 / (tau * tau))
    };
    let problem = MapProblem { views: training.iter().map(view_points).collect(), k, ridge, inv_var, inv_tau2 };

    let mut best: Option<Candidate> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rots: Vec<Rotation3> = match (&opts.initial_rotations, restart) {
            (Some(init), 0) => init.clone(),
            _ => (0..training.len()).map(|_| sample_rotation(rng)).collect(),
        };
        let mut m = problem.structure_step(&rots);
        let mut trace = vec![problem.objective(&m, &rots)];
        let mut converged = false;
        for _ in 0..opts.iters {
            for (j, t) in problem.views.iter().enumerate() {
                let current = view_sse(t, &rots[j], &m);
                let (cand, cost) = best_rotation(t, &m, Some(rots[j]), opts.rotation_candidates, rng);
                if cost < current {
                    rots[j] = cand;
                }
            }
            let m_next = problem.structure_step(&rots);
            if problem.objective(&m_next, &rots) >= problem.objective(&m, &rots) {
                m = m_next;
            }
            let j_now = problem.objective(&m, &rots);
            let j_prev = *trace.last().expect("trace starts nonempty");
            trace.push(j_now);
            if (j_now - j_prev).abs() <= opts.tol * (1.0 + j_now.abs()) {
                converged = true;
                break;
            }
        }
        let better = match &best {
            None => true,
            Some((_, _, tr, _)) => trace.last() > tr.last(),
        };
        if better {
            best = Some((m, rots, trace, converged));
        }
    }
    let (m, rots, trace, converged) = best.expect("at least one restart");

    // Gauge: first rotation becomes the identity.
    let r1 = *rots[0].matrix();
    let mut model: Vec<Vector3<f64>> = m.iter().map(|p| r1 * p).collect();
    let mut rotations: Vec<Rotation3> = rots.iter().map(|r| (*r * rots[0].transpose()).renormalized()).collect();
    let scale = model.iter().map(|p| p.amax()).fold(0.0f64, f64::max);
    if let Some(p) = model.iter().find(|p| p.z.abs() > 1e-12 * scale.max(1e-300)) {
        if p.z < 0.0 {
            let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
            model = model.iter().map(|p| flip * p).collect();
            rotations =
                rotations.iter().map(|r| Rotation3::from_matrix(flip * r.matrix() * flip).unwrap_or(*r)).collect();
        }
    }
    Ok(MapEstimate { model: PointSet3D::new(model, ObjectId(0))?, rotations, objective_trace: trace, converged })
}

/// Known-model likelihood evaluated at the MAP model of the training views.
pub fn likelihood_map_model<R: Rng + ?Sized>(
    v: &View,
    training: &[View],
    priors: &Priors,
    mc: &MonteCarloParams,
    rng: &mut R,
) -> Result<LikelihoodEstimate> {
    let est = map_model_estimate_with(training, priors, &MapOptions::default(), rng)?;
    likelihood_known_model(v, &est.model, priors, mc, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{add_noise, project, NoiseModel};
    use crate::rng::substream;

    fn priors(sigma: f64, tau: f64, classes: usize) -> Priors {
        Priors::uniform(classes, tau, NoiseModel::new(sigma).unwrap()).unwrap()
    }

    fn est(log_value: f64) -> LikelihoodEstimate {
        LikelihoodEstimate {
            log_value,
            std_error: 0.0,
            rotation_samples: 1,
            model_samples: 1,
            effective_samples: 1.0,
            underflow: log_value == f64::NEG_INFINITY,
            ess_collapse: false,
        }
    }

    fn table(values: &[f64]) -> BTreeMap<ObjectId, LikelihoodEstimate> {
        values.iter().enumerate().map(|(i, v)| (ObjectId(i), est(*v))).collect()
    }

    #[test]
    fn decide_cases() {
        let noise = NoiseModel::new(1.0).unwrap();
        let uniform = Priors::uniform(2, 1.0, noise).unwrap();
        let lik = table(&[0.2f64.ln(), 0.1f64.ln()]);
        assert_eq!(decide(&lik, &uniform).unwrap().chosen, ObjectId(0));

        let skewed = Priors::new(vec![0.1, 0.9], 1.0, noise).unwrap();
        assert_eq!(decide(&lik, &skewed).unwrap().chosen, ObjectId(1));

        let tie = table(&[-1.0, -1.0]);
        let d = decide(&tie, &uniform).unwrap();
        assert_eq!(d.chosen, ObjectId(0));
        assert_eq!(d.margin, 0.0);

        let single = table(&[-3.0]);
        assert_eq!(decide(&single, &Priors::uniform(1, 1.0, noise).unwrap()).unwrap().margin, f64::INFINITY);
    }

    #[test]
    fn decide_all_underflow_falls_back_to_prior() {
        let noise = NoiseModel::new(1.0).unwrap();
        let p = Priors::new(vec![0.3, 0.7], 1.0, noise).unwrap();
        let d = decide(&table(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), &p).unwrap();
        assert_eq!(d.chosen, ObjectId(1));
        assert!(d.flags.prior_fallback);
        assert!(decide(&BTreeMap::new(), &p).is_err());
    }

    #[test]
    fn known_model_rotation_invariant_case_is_exact() {
        let m = PointSet3D::from_coords(&[[0.0, 0.0, 0.0]], ObjectId(0)).unwrap();
        let v = View::new(vec![0.0, 0.0]).unwrap();
        let mc = MonteCarloParams::new(256, 1, "t").unwrap();
        let e = likelihood_known_model(&v, &m, &priors(1.0, 1.0, 1), &mc, &mut substream(1, "r")).unwrap();
        let exact = 1.0 / (2.0 * std::f64::consts::PI);
        assert!((e.log_value.exp() - exact).abs() <= 1e-12);
        assert!(e.std_error <= 1e-12);
    }

    #[test]
    fn known_model_is_deterministic() {
        let m = PointSet3D::from_coords(&[[0.0, 0.0, 1.0], [0.5, -0.2, 0.1]], ObjectId(0)).unwrap();
        let v = View::new(vec![0.3, 0.1, 0.2, 0.0]).unwrap();
        let mc = MonteCarloParams::new(512, 1, "t").unwrap();
        let p = priors(0.2, 1.0, 1);
        let a = likelihood_known_model(&v, &m, &p, &mc, &mut substream(2, "r")).unwrap();
        let b = likelihood_known_model(&v, &m, &p, &mc, &mut substream(2, "r")).unwrap();
        assert_eq!(a, b);
        let short = View::new(vec![0.3, 0.1]).unwrap();
        assert!(likelihood_known_model(&short, &m, &p, &mc, &mut substream(2, "r")).is_err());
    }

    #[test]
    fn single_rotation_integrand_decreases_with_distance() {
        let m = PointSet3D::from_coords(&[[0.3, -0.4, 0.9], [1.0, 0.2, -0.5]], ObjectId(0)).unwrap();
        let r = sample_rotation(&mut substream(3, "r"));
        let center = project(&m, &r);
        let kernel = GaussianKernel::new(0.3, 4);
        let dir = [0.3, -0.7, 0.2, 0.5];
        let mut prev = f64::INFINITY;
        let mut out = Vec::new();
        for step in 0..50 {
            let t = step as f64 * 0.05;
            let v: Vec<f64> = center.as_slice().iter().zip(dir).map(|(c, d)| c + t * d).collect();
            log_integrands(&v, center.as_slice(), kernel, &mut out);
            assert!(out[0] <= prev);
            prev = out[0];
        }
    }

    #[test]
    fn empty_training_reduces_to_prior_predictive() {
        // With one point, a N(0, tau^2 I3) model projects to N(0, tau^2 I2)
        // under any rotation, so the prior predictive is N(0, (tau^2 + sigma^2) I2).
        let (sigma, tau) = (0.5, 1.0);
        let p = priors(sigma, tau, 1);
        let mc = MonteCarloParams::new(64, 4096, "t").unwrap();
        let v = View::new(vec![0.4, -0.8]).unwrap();
        let e = likelihood_from_training(&v, &[], &p, &mc, &mut substream(4, "pp")).unwrap();
        let s2 = tau * tau + sigma * sigma;
        let exact = (-(0.16 + 0.64) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2);
        assert!((e.log_value - exact.ln()).abs() <= 3.0 * e.std_error + 1e-3, "{e:?} vs {exact}");
        assert_eq!(e.effective_samples, 4096.0);
        assert!(!e.ess_collapse);
    }

    #[test]
    fn matching_training_views_raise_the_likelihood() {
        let p = priors(0.05, 3.0, 1);
        let mc = MonteCarloParams::new(256, 256, "t").unwrap();
        let v = View::new(vec![0.5, 0.5, -0.5, 0.2]).unwrap();
        let near = vec![v.clone(), v.clone(), v.clone()];
        let far = vec![View::new(vec![4.0, -4.0, 3.0, 3.5]).unwrap(); 3];
        let a = likelihood_from_training(&v, &near, &p, &mc, &mut substream(5, "x")).unwrap();
        let b = likelihood_from_training(&v, &far, &p, &mc, &mut substream(5, "x")).unwrap();
        assert!(a.log_value > b.log_value, "{} vs {}", a.log_value, b.log_value);

        let again = likelihood_from_training(&v, &near, &p, &mc, &mut substream(5, "x")).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn posterior_flags_weight_collapse() {
        let p = priors(0.01, 1.0, 1);
        let mc = MonteCarloParams::new(128, 64, "t").unwrap();
        let t = vec![View::new(vec![0.9, 0.1, -0.3, 0.6]).unwrap(); 4];
        let post = ModelPosterior::fit(&t, 2, &p, &mc, &mut substream(6, "w")).unwrap();
        assert!(post.ess_collapsed());
        let e = post.predictive(&t[0], &mut substream(6, "q")).unwrap();
        assert!(e.ess_collapse);
        assert!(e.std_error.is_finite());
    }

    fn synthetic_training(k: usize, r: usize, sigma: f64, seed: u64) -> (PointSet3D, Vec<Rotation3>, Vec<View>) {
        let mut rng = substream(seed, "map-world");
        let p = priors(sigma.max(1e-9), 1.0, 1);
        let m = sample_model(&p, k, ObjectId(0), &mut rng);
        let rots: Vec<Rotation3> = (0..r).map(|_| sample_rotation(&mut rng)).collect();
        let noise = if sigma == 0.0 { NoiseModel::deterministic() } else { NoiseModel::new(sigma).unwrap() };
        let views = rots.iter().map(|r| add_noise(&project(&m, r), &noise, &mut rng)).collect();
        (m, rots, views)
    }

    fn reprojection_rms(est: &MapEstimate, views: &[View]) -> f64 {
        let mut sse = 0.0;
        let mut count = 0;
        for (v, r) in views.iter().zip(&est.rotations) {
            let p = project(&est.model, r);
            sse += v.as_slice().iter().zip(p.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            count += v.dim();
        }
        (sse / count as f64).sqrt()
    }

    #[test]
    fn map_recovers_noise_free_model_from_true_rotations() {
        let (_, rots, views) = synthetic_training(4, 5, 0.0, 7);
        let p = priors(1e-7, 1.0, 1);
        let opts = MapOptions { initial_rotations: Some(rots), restarts: 1, ..Default::default() };
        let est = map_model_estimate_with(&views, &p, &opts, &mut substream(7, "map")).unwrap();
        assert!(reprojection_rms(&est, &views) <= 1e-8, "rms {}", reprojection_rms(&est, &views));
    }

    #[test]
    fn map_objective_is_monotone() {
        let (_, _, views) = synthetic_training(4, 6, 0.05, 8);
        let p = priors(0.05, 1.0, 1);
        let opts = MapOptions { restarts: 3, iters: 30, ..Default::default() };
        let est = map_model_estimate_with(&views, &p, &opts, &mut substream(8, "map")).unwrap();
        for w in est.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "objective decreased: {} -> {}", w[0], w[1]);
        }
        assert!(map_model_estimate(&[], &p, 5, &mut substream(8, "map")).is_err());
    }

    #[test]
    fn map_model_generalizes_better_than_a_prior_draw() {
        let (truth, _, views) = synthetic_training(4, 12, 0.05, 9);
        let (train, held_out) = views.split_at(8);
        let p = priors(0.05, 1.0, 1);
        let mut rng = substream(9, "map");
        let est = map_model_estimate(train, &p, 50, &mut rng).unwrap();
        let random = sample_model(&p, 4, ObjectId(0), &mut substream(9, "random"));
        let score = |m: &PointSet3D, rng: &mut crate::rng::Stream| -> f64 {
            held_out.iter().map(|v| fit_rotation(v, m, 256, None, rng).unwrap().1.powi(2)).sum::<f64>().sqrt()
        };
        let fitted = score(&est.model, &mut substream(9, "eval"));
        let baseline = score(&random, &mut substream(9, "eval"));
        let oracle = score(&truth, &mut substream(9, "eval"));
        assert!(fitted < baseline, "fitted {fitted} vs random {baseline}");
        assert!(fitted < 3.0 * oracle + 0.05, "fitted {fitted} vs truth {oracle}");
    }
}
