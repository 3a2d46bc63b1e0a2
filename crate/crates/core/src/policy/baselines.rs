//! Reference controllers: hold still, open-loop replay, a scripted top-down
//! grasp and nearest-start replay.

use serde::{Deserialize, Serialize};

use crate::fixtures::{closure_config, palm_down};
use crate::geometry::{SE3Pose, Vec3};
use crate::kinematics::{HandModel, HandState};
use crate::refine::{nearest_start, FunnelWeights};
use crate::retarget::{ObservedFrame, RobotTrajectory};
use crate::sim::{offset_actions, ObjectSpec, Simulator};

use super::{Policy, PolicyOutput};

/// Emits the absolute target `plan[k]` at step `k`, holding the last one.
fn follow(plan: &[HandState], history: &[ObservedFrame]) -> PolicyOutput {
    let current = &history[history.len() - 1].hand;
    match plan.get(history.len() - 1).or(plan.last()) {
        Some(target) => PolicyOutput::from_target(current, target),
        None => PolicyOutput::hold(current),
    }
}

/// Never moves.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullPolicy;

impl Policy for NullPolicy {
    fn reset(&mut self, _: &Simulator, _: &ObjectSpec, _: &ObservedFrame) {}

    fn act(&mut self, _: &Simulator, _: &ObjectSpec, history: &[ObservedFrame]) -> PolicyOutput {
        PolicyOutput::hold(&history[history.len() - 1].hand)
    }
}

/// Open-loop replay of absolute actions shifted by a palm offset.
#[derive(Debug, Clone)]
pub struct ReplayPolicy {
    plan: Vec<HandState>,
}

impl ReplayPolicy {
    pub fn new(actions: Vec<HandState>, offset: Vec3) -> Self {
        Self {
            plan: offset_actions(&actions, &offset),
        }
    }
}

impl Policy for ReplayPolicy {
    fn reset(&mut self, _: &Simulator, _: &ObjectSpec, _: &ObservedFrame) {}

    fn act(&mut self, _: &Simulator, _: &ObjectSpec, history: &[ObservedFrame]) -> PolicyOutput {
        follow(&self.plan, history)
    }
}

/// Scripted grasp that ignores object orientation: fixed palm yaw, a
/// standoff above the centroid of sampled surface points and a fixed closure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicConfig {
    pub palm_yaw: f64,
    /// Palm height above the point centroid at grasp time (m).
    pub standoff: f64,
    /// Extra height of the pre-grasp pose above the grasp pose (m).
    pub approach_height: f64,
    /// Closure parameter in `[0, 1]`.
    pub closure: f64,
    pub lift_height: f64,
    pub approach_frames: usize,
    pub descend_frames: usize,
    pub close_frames: usize,
    pub settle_frames: usize,
    pub lift_frames: usize,
    pub hold_frames: usize,
    pub surface_points: usize,
    pub point_seed: u64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            palm_yaw: 0.0,
            standoff: 0.08,
            approach_height: 0.10,
            closure: 0.8,
            lift_height: 0.16,
            approach_frames: 12,
            descend_frames: 8,
            close_frames: 6,
            settle_frames: 2,
            lift_frames: 12,
            hold_frames: 8,
            surface_points: 64,
            point_seed: 0,
        }
    }
}

/// Absolute actions of the scripted grasp from `start` toward the centroid of
/// `points`.
pub fn heuristic_baseline(model: &HandModel, points: &[Vec3], start: &HandState, cfg: &HeuristicConfig) -> Vec<HandState> {
    let centroid = points.iter().fold(Vec3::zeros(), |a, p| a + p) / points.len().max(1) as f64;
    let grasp = SE3Pose::new(centroid + Vec3::new(0.0, 0.0, cfg.standoff), palm_down(cfg.palm_yaw));
    let mut pre = grasp;
    pre.translation.z += cfg.approach_height;
    let mut lift = grasp;
    lift.translation.z += cfg.lift_height;
    let open = closure_config(model, 0.0);
    let closed = closure_config(model, cfg.closure.clamp(0.0, 1.0));
    let ramp = |n: usize| (1..=n).map(move |i| i as f64 / n as f64);

    let mut plan = Vec::new();
    for t in ramp(cfg.approach_frames) {
        plan.push(HandState::new(start.palm_pose.interpolate(&pre, t), start.joints.lerp(&open, t)));
    }
    for t in ramp(cfg.descend_frames) {
        plan.push(HandState::new(pre.interpolate(&grasp, t), open.clone()));
    }
    for t in ramp(cfg.close_frames) {
        plan.push(HandState::new(grasp, open.lerp(&closed, t)));
    }
    plan.extend(std::iter::repeat_n(HandState::new(grasp, closed.clone()), cfg.settle_frames));
    for t in ramp(cfg.lift_frames) {
        plan.push(HandState::new(grasp.interpolate(&lift, t), closed.clone()));
    }
    plan.extend(std::iter::repeat_n(HandState::new(lift, closed), cfg.hold_frames));
    plan
}

#[derive(Debug, Clone, Default)]
pub struct HeuristicPolicy {
    pub config: HeuristicConfig,
    plan: Vec<HandState>,
}

impl HeuristicPolicy {
    pub fn new(config: HeuristicConfig) -> Self {
        Self { config, plan: Vec::new() }
    }
}

impl Policy for HeuristicPolicy {
    fn reset(&mut self, sim: &Simulator, object: &ObjectSpec, first: &ObservedFrame) {
        let points = sim.sample_surface_points(object, &first.object_pose, self.config.surface_points, self.config.point_seed);
        self.plan = heuristic_baseline(sim.model(), &points, &first.hand, &self.config);
    }

    fn act(&mut self, _: &Simulator, _: &ObjectSpec, history: &[ObservedFrame]) -> PolicyOutput {
        follow(&self.plan, history)
    }
}

/// Training trajectory whose start is closest to `hand`.
pub fn nearest_neighbor_baseline<'a>(hand: &HandState, dataset: &'a [RobotTrajectory], w: &FunnelWeights) -> Option<&'a RobotTrajectory> {
    nearest_start(hand, dataset, w).map(|i| &dataset[i])
}

/// Replays, open loop, the executed actions of the training trajectory with
/// the nearest start.
#[derive(Debug, Clone)]
pub struct NearestNeighborPolicy {
    dataset: Vec<RobotTrajectory>,
    pub weights: FunnelWeights,
    plan: Vec<HandState>,
}

impl NearestNeighborPolicy {
    pub fn new(dataset: Vec<RobotTrajectory>, weights: FunnelWeights) -> Self {
        Self {
            dataset,
            weights,
            plan: Vec::new(),
        }
    }
}

impl Policy for NearestNeighborPolicy {
    fn reset(&mut self, _: &Simulator, _: &ObjectSpec, first: &ObservedFrame) {
        self.plan = match nearest_neighbor_baseline(&first.hand, &self.dataset, &self.weights) {
            Some(t) => {
                let offset = t.provenance.physics.map(|p| p.noise_offset()).unwrap_or_else(Vec3::zeros);
                offset_actions(&t.actions, &offset)
            }
            None => Vec::new(),
        };
    }

    fn act(&mut self, _: &Simulator, _: &ObjectSpec, history: &[ObservedFrame]) -> PolicyOutput {
        follow(&self.plan, history)
    }
}
