//! Funneling: free-space prefixes from diverse initial hand states into the
//! closest verified trajectory.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{geodesic_distance, Rotation, SE3Pose, Vec3};
use crate::kinematics::{HandModel, HandState, JointConfig};
use crate::retarget::{Provenance, RobotTrajectory, Stage};
use crate::sim::{ObjectSpec, SimError, Simulator, SuccessSpec};

use super::{attach_replay, replay, RefineError};

/// Weights of the start-state distance: palm translation (per m), palm
/// rotation (per rad) and joint L2 (per rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunnelWeights {
    pub translation: f64,
    pub rotation: f64,
    pub joints: f64,
}

impl Default for FunnelWeights {
    fn default() -> Self {
        Self {
            translation: 1.0,
            rotation: 0.3,
            joints: 0.1,
        }
    }
}

pub fn funnel_distance(a: &HandState, b: &HandState, w: &FunnelWeights) -> f64 {
    w.translation * (a.palm_pose.translation - b.palm_pose.translation).norm()
        + w.rotation * geodesic_distance(&a.palm_pose.rotation, &b.palm_pose.rotation)
        + w.joints * a.joints.distance(&b.joints)
}

/// Index of the trajectory whose start is closest to `hand` (first on ties).
pub fn nearest_start(hand: &HandState, dataset: &[RobotTrajectory], w: &FunnelWeights) -> Option<usize> {
    dataset
        .iter()
        .map(|t| funnel_distance(hand, t.start(), w))
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunnelConfig {
    /// Prefix length in control steps.
    pub steps: usize,
    pub weights: FunnelWeights,
    /// Further candidates (next-nearest starts) tried after the nearest fails.
    pub retries: usize,
    pub checks: SuccessSpec,
}

impl Default for FunnelConfig {
    fn default() -> Self {
        Self {
            steps: 8,
            weights: FunnelWeights::default(),
            retries: 2,
            checks: SuccessSpec::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum FunnelError {
    #[error("empty funneling dataset")]
    EmptyDataset,
    #[error("funneling needs at least one prefix step")]
    NoSteps,
    #[error("no contact-free successful prefix after {tried} attempts")]
    NoFeasiblePrefix { tried: usize },
    #[error(transparent)]
    Refine(#[from] RefineError),
}

/// Prefix states from `from` to `to`: straight, or through a waypoint
/// raised above both endpoints.
fn prefix(from: &HandState, to: &HandState, steps: usize, raised: bool) -> Vec<HandState> {
    if !raised || steps < 2 {
        return (1..=steps).map(|k| from.interpolate(to, k as f64 / steps as f64)).collect();
    }
    let mut via = from.clone();
    via.palm_pose.translation.z = from.palm_pose.translation.z.max(to.palm_pose.translation.z) + 0.05;
    let first = steps / 2;
    let mut out: Vec<HandState> = (1..=first).map(|k| from.interpolate(&via, k as f64 / first as f64)).collect();
    let rest = steps - first;
    out.extend((1..=rest).map(|k| via.interpolate(to, k as f64 / rest as f64)));
    out
}

/// Prepends a `steps`-frame free-space prefix from `initial_hand` to the
/// start of the closest trajectory in `dataset`. The prefix must be
/// contact-free up to the junction and the whole trajectory must replay
/// successfully under the selected trajectory's stored parameters;
/// otherwise a raised prefix and then the next-nearest starts are tried.
pub fn funnel(
    sim: &Simulator,
    object: &ObjectSpec,
    initial_hand: &HandState,
    dataset: &[RobotTrajectory],
    cfg: &FunnelConfig,
) -> Result<RobotTrajectory, FunnelError> {
    if dataset.is_empty() {
        return Err(FunnelError::EmptyDataset);
    }
    if cfg.steps == 0 {
        return Err(FunnelError::NoSteps);
    }
    let mut ranked: Vec<(f64, usize)> = dataset
        .iter()
        .enumerate()
        .map(|(i, t)| (funnel_distance(initial_hand, t.start(), &cfg.weights), i))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut tried = 0;
    for &(_, i) in ranked.iter().take(cfg.retries + 1) {
        let base = &dataset[i];
        for raised in [false, true] {
            tried += 1;
            let pre = prefix(initial_hand, base.start(), cfg.steps, raised);
            let mut actions = pre.clone();
            actions.extend(base.actions.iter().cloned());
            let mut poses = vec![*base.initial_object_pose(); cfg.steps];
            poses.extend(base.frames.iter().map(|f| f.object_pose));
            let mut cand = RobotTrajectory::from_plan(
                format!("{}/f", base.id),
                base.source_demo_id.clone(),
                base.object.clone(),
                Stage::Funneled,
                initial_hand.clone(),
                actions,
                &poses,
            );
            cand.provenance = Provenance {
                parent: Some(base.id.clone()),
                physics: base.provenance.physics,
                prefix_frames: Some(cfg.steps),
                ..Provenance::default()
            };
            let out = match replay(sim, object, &cand, &cfg.checks) {
                Ok(o) => o,
                Err(RefineError::Sim(SimError::InvalidSetup(_) | SimError::NumericalBlowup { .. })) => continue,
                Err(e) => return Err(e.into()),
            };
            let touched = out.observations[..=cfg.steps].iter().any(|o| o.contacts.any());
            if touched || !out.success {
                continue;
            }
            cand.provenance.verified = true;
            attach_replay(&mut cand, &out);
            return Ok(cand);
        }
    }
    Err(FunnelError::NoFeasiblePrefix { tried })
}

/// Distribution of initial hand states around an object: palm down with
/// uniform yaw, placed on a ring around the object center at a height
/// band, joints jittered around zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialHandDistribution {
    pub min_radius: f64,
    pub max_radius: f64,
    /// Palm height above the table (m).
    pub min_height: f64,
    pub max_height: f64,
    /// Palm yaw is uniform in `[-max_yaw, max_yaw]` (rad).
    pub max_yaw: f64,
    pub joint_jitter: f64,
}

impl Default for InitialHandDistribution {
    fn default() -> Self {
        Self {
            min_radius: 0.0,
            max_radius: 0.12,
            min_height: 0.2,
            max_height: 0.3,
            max_yaw: PI,
            joint_jitter: 0.2,
        }
    }
}

impl InitialHandDistribution {
    pub fn sample<R: Rng>(&self, model: &HandModel, object_center: &Vec3, rng: &mut R) -> HandState {
        let r = rng.random_range(self.min_radius..=self.max_radius);
        let phi = rng.random_range(-PI..PI);
        let z = rng.random_range(self.min_height..=self.max_height);
        let yaw = rng.random_range(-self.max_yaw..=self.max_yaw);
        let rotation = Rotation::from_axis_angle(&Vec3::z(), yaw).compose(&Rotation::from_axis_angle(&Vec3::x(), PI));
        let translation = Vec3::new(object_center.x + r * phi.cos(), object_center.y + r * phi.sin(), z);
        let angles = (0..model.dof_count())
            .map(|_| rng.random_range(-self.joint_jitter..=self.joint_jitter))
            .collect();
        HandState::new(SE3Pose::new(translation, rotation), model.clamp_to_limits(&JointConfig::new(angles)))
    }
}
