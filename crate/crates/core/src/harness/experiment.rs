//! Paired experiments: every enabled observer answers every trial with the
//! same world, the same target and the same Monte-Carlo substreams.

use std::time::Instant;

use rayon::prelude::*;

use super::config::{ExperimentConfig, ObserverKind};
use super::report::{ObserverOutcome, Report, TrialRecord, WorldSummary};
use super::world::{generate_world, sample_target, World};
use crate::bayes::Decision;
use crate::edm::{similarity_set, SimilaritySet};
use crate::observers::{
    observer_nn, score_kernel, train_kernel, InterleaveObserver, KernelWeights, MapObserver, Observer3d, StronglyTwoD,
};
use crate::{Error, Result};

enum Trained {
    ThreeD(Observer3d),
    TwoD(Box<StronglyTwoD>),
    Nn,
    Kernel(KernelWeights),
    Map(MapObserver),
    Interleave(InterleaveObserver),
    Failed(String),
}

/// A world with every enabled observer trained on it.
pub struct Experiment {
    config: ExperimentConfig,
    world: World,
    observers: Vec<(ObserverKind, Trained)>,
    summary: WorldSummary,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

impl Experiment {
    /// Generate the world and train the observers. Only configuration
    /// errors abort; an observer that cannot be trained fails every trial.
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let world = generate_world(config)?;
        let priors = &world.priors;
        let (mc, seed) = (&config.mc, config.master_seed);
        let mut summary = WorldSummary { training_views: world.base.len(), ..Default::default() };
        let mut observers = Vec::new();
        for &kind in &config.observers {
            let trained: Result<Trained> = match kind {
                ObserverKind::ThreeD => Observer3d::train(&world.base, priors, mc, seed).map(Trained::ThreeD),
                ObserverKind::StronglyTwoD => (|| {
                    let anchors = world
                        .anchors
                        .as_ref()
                        .ok_or_else(|| Error::DegenerateInput(world.anchor_error.clone().unwrap_or_default()))?;
                    let dm = world.base.distance_matrix()?;
                    let obs = StronglyTwoD::train(&dm, &world.base.labels(), anchors, priors, mc, seed)?;
                    summary.reconstruction_residual = Some(obs.embedding().quality());
                    summary.anchor_residual = Some(obs.anchor_residual());
                    summary.restoration_error = Some(
                        obs.restored_views()
                            .iter()
                            .zip(world.base.views())
                            .map(|(r, v)| max_abs_diff(r.as_slice(), v.view.as_slice()))
                            .fold(0.0, f64::max),
                    );
                    Ok(Trained::TwoD(Box::new(obs)))
                })(),
                ObserverKind::NearestNeighbor => Ok(Trained::Nn),
                ObserverKind::Kernel => world.base.distance_matrix().and_then(|dm| {
                    train_kernel(&dm, &world.base.labels(), config.kernel_bandwidth, config.kernel_ridge)
                        .map(Trained::Kernel)
                }),
                ObserverKind::MapModel => {
                    MapObserver::train(&world.base, priors, mc, seed, &config.map_options()).map(Trained::Map)
                }
                ObserverKind::Interleave => config
                    .codec()
                    .and_then(|codec| InterleaveObserver::train(&world.base, &codec, priors, mc, seed))
                    .map(Trained::Interleave),
            };
            let trained = trained.unwrap_or_else(|e| {
                summary.training_failures.push((kind, e.to_string()));
                Trained::Failed(e.to_string())
            });
            observers.push((kind, trained));
        }
        Ok(Self { config: config.clone(), world, observers, summary })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn world_summary(&self) -> &WorldSummary {
        &self.summary
    }

    /// Run one trial through every observer.
    pub fn run_trial(&self, trial: u64) -> TrialRecord {
        let target = sample_target(&self.config, &self.world, trial);
        let needs_distances = self.observers.iter().any(|(k, _)| {
            matches!(k, ObserverKind::StronglyTwoD | ObserverKind::NearestNeighbor | ObserverKind::Kernel)
        });
        let similarities: Option<Result<SimilaritySet>> =
            needs_distances.then(|| similarity_set(&target.view, self.world.base.views()));
        let distances = || -> Result<&SimilaritySet> {
            match similarities.as_ref().expect("computed when a distance observer is enabled") {
                Ok(s) => Ok(s),
                Err(e) => Err(Error::DegenerateInput(e.to_string())),
            }
        };

        let mut reconstruction_error = None;
        let mut outcomes = Vec::with_capacity(self.observers.len());
        for (kind, trained) in &self.observers {
            let start = Instant::now();
            let result: Result<Decision> = match trained {
                Trained::ThreeD(o) => o.decide(&target.view, trial),
                Trained::TwoD(o) => distances().and_then(|s| {
                    let restored = o.restore_target(s.target())?;
                    reconstruction_error = Some(max_abs_diff(restored.as_slice(), target.view.as_slice()));
                    o.decide(s.target(), trial)
                }),
                Trained::Nn => distances().map(observer_nn),
                Trained::Kernel(w) => distances().and_then(|s| score_kernel(s, w)),
                Trained::Map(o) => o.decide(&target.view, trial),
                Trained::Interleave(o) => o.decide(&target.view, trial),
                Trained::Failed(msg) => Err(Error::InvalidArgument(msg.clone())),
            };
            let wall_time = start.elapsed();
            let (decision, error) = match result {
                Ok(d) => (d, None),
                Err(e) => {
                    let mut d = Decision::prior_fallback(&self.world.priors);
                    d.flags.failed = true;
                    (d, Some(e.to_string()))
                }
            };
            outcomes.push(ObserverOutcome { observer: *kind, decision, error, wall_time });
        }
        TrialRecord { trial, truth: target.class, outcomes, reconstruction_error }
    }

    /// Run every trial on the current thread pool.
    pub fn run(&self) -> Report {
        let records: Vec<TrialRecord> =
            (0..self.config.trials as u64).into_par_iter().map(|t| self.run_trial(t)).collect();
        Report::assemble(self.config.clone(), self.summary.clone(), records)
    }
}

/// Generate, train and run on the global thread pool.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    Ok(Experiment::prepare(config)?.run())
}

/// [`run_experiment`] on a dedicated pool of `jobs` threads.
pub fn run_experiment_with_jobs(config: &ExperimentConfig, jobs: usize) -> Result<Report> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| run_experiment(config))
}
