//! Simulated worlds and per-trial targets.

use rand::Rng;

use super::config::ExperimentConfig;
use crate::edm::{LabeledView, ViewLabel};
use crate::geometry::{
    add_noise, project, sample_model, sample_rotation, ObjectId, PointSet3D, Priors, Rotation3, View,
};
use crate::observers::{AnchorInfo, ModelBase};
use crate::rng::substream;
use crate::Result;

/// Generated objects, their training views and the anchors.
#[derive(Debug, Clone)]
pub struct World {
    pub priors: Priors,
    pub models: Vec<PointSet3D>,
    pub base: ModelBase,
    /// The rotation that produced each base view.
    pub rotations: Vec<Rotation3>,
    /// Absent when the first views do not span a frame.
    pub anchors: Option<AnchorInfo>,
    pub anchor_error: Option<String>,
}

/// Sample every model from the prior and `views_per_object` noisy views of
/// each, object by object. Anchors are the first `2k+1` base views.
pub fn generate_world(config: &ExperimentConfig) -> Result<World> {
    config.validate()?;
    let priors = config.priors()?;
    let seed = config.master_seed;
    let models: Vec<PointSet3D> = (0..config.n_objects)
        .map(|c| sample_model(&priors, config.k, ObjectId(c), &mut substream(seed, &format!("world/model/{c}"))))
        .collect();
    let mut views = Vec::new();
    let mut rotations = Vec::new();
    for (c, m) in models.iter().enumerate() {
        for i in 0..config.views_per_object {
            let mut rng = substream(seed, &format!("world/view/{c}/{i}"));
            let r = sample_rotation(&mut rng);
            let v = add_noise(&project(m, &r), &priors.noise(), &mut rng);
            views.push(LabeledView { label: ViewLabel { object: ObjectId(c), index: i }, view: v });
            rotations.push(r);
        }
    }
    let base = ModelBase::new(views, config.n_objects)?;
    let (anchors, anchor_error) = match AnchorInfo::from_base(&base) {
        Ok(a) => (Some(a), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(World { priors, models, base, rotations, anchors, anchor_error })
}

/// A test view with its hidden truth.
#[derive(Debug, Clone)]
pub struct Target {
    pub class: ObjectId,
    pub rotation: Rotation3,
    pub view: View,
}

/// Draw trial `trial`'s target: class from the prior, then a Haar rotation
/// and noise.
pub fn sample_target(config: &ExperimentConfig, world: &World, trial: u64) -> Target {
    let mut rng = substream(config.master_seed, &format!("trial/{trial}/target"));
    let u: f64 = rng.random();
    let prior = world.priors.class_prior();
    let mut acc = 0.0;
    let mut class = prior.len() - 1;
    for (c, p) in prior.iter().enumerate() {
        acc += p;
        if u < acc {
            class = c;
            break;
        }
    }
    let rotation = sample_rotation(&mut rng);
    let view = add_noise(&project(&world.models[class], &rotation), &world.priors.noise(), &mut rng);
    Target { class: ObjectId(class), rotation, view }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_single_view_is_the_shadow() {
        let c = ExperimentConfig {
            k: 1,
            n_objects: 2,
            views_per_object: 1,
            sigma: 0.0,
            observers: vec![super::super::ObserverKind::ThreeD],
            ..Default::default()
        };
        let w = generate_world(&c).unwrap();
        for (v, r) in w.base.views().iter().zip(&w.rotations) {
            let p = r.matrix() * w.models[v.label.object.0].points()[0];
            assert_eq!(v.view.as_slice(), &[p.x, p.y]);
        }
    }

    #[test]
    fn world_is_deterministic() {
        let c = ExperimentConfig::default();
        let (a, b) = (generate_world(&c).unwrap(), generate_world(&c).unwrap());
        assert_eq!(a.base, b.base);
        assert_eq!(a.anchors, b.anchors);
        assert_eq!(a.base.len(), 24);
        assert_eq!(a.anchors.unwrap().indices().len(), 9);
        let t = sample_target(&c, &b, 7);
        let u = sample_target(&c, &b, 7);
        assert_eq!((t.class, t.view), (u.class, u.view));
    }

    #[test]
    fn targets_follow_the_class_prior() {
        let c = ExperimentConfig {
            class_prior: Some(vec![0.1, 0.2, 0.7]),
            observers: vec![super::super::ObserverKind::ThreeD],
            ..Default::default()
        };
        let w = generate_world(&c).unwrap();
        let mut counts = [0usize; 3];
        for t in 0..4000 {
            counts[sample_target(&c, &w, t).class.0] += 1;
        }
        for (n, p) in counts.iter().zip([0.1, 0.2, 0.7]) {
            assert!((*n as f64 / 4000.0 - p).abs() < 0.03, "{counts:?}");
        }
    }
}
