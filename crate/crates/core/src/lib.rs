//! Similarity-based 3D object recognition laboratory.
//!
//! The crate simulates a world of 3D point objects seen under random
//! rotations and orthographic projection, and compares a coordinate-aware
//! Bayesian observer against observers that only ever see Euclidean
//! distances between views. The distance-only observer reconstructs the
//! views from the distance matrix ([`edm`]), resolves the leftover global
//! isometry with a handful of anchor views ([`geometry::procrustes_align`]),
//! and then runs the very same Monte-Carlo likelihood code ([`bayes`]).
//!
//! Module map:
//!
//! * [`geometry`]: point models, views, Haar rotations, projection, noise,
//!   Procrustes alignment.
//! * [`edm`]: distance matrices, similarity sets, sphere intersection,
//!   incremental and spectral reconstruction.
//! * [`bayes`]: known-model, training-view and MAP-model likelihoods and the
//!   arg-max decision rule.
//! * [`observers`]: the full-information, distance-only, nearest-neighbour,
//!   kernel and digit-interleaving observers.
//! * [`harness`]: world generation, paired experiments and reports.

pub mod bayes;
pub mod edm;
mod error;
pub mod geometry;
pub mod harness;
pub mod observers;
pub mod rng;
pub(crate) mod serde_ext;

pub use error::{Error, Result};

pub use bayes::{Decision, LikelihoodEstimate, MonteCarloParams};
pub use edm::{DistanceMatrix, Embedding, SimilaritySet};
pub use geometry::{IsometryN, NoiseModel, ObjectId, PointSet3D, Priors, Rotation3, View};
pub use harness::{ExperimentConfig, ObserverKind, Report, TrialRecord};
