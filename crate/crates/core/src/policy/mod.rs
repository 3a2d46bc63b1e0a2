//! Closed-loop behavior cloning: palm-relative features, a three-head
//! network trained on verified trajectories, the multi-attempt evaluator and
//! baseline controllers.

mod baselines;
mod eval;
mod features;
mod loss;
mod network;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baselines::{
    heuristic_baseline, nearest_neighbor_baseline, HeuristicConfig, HeuristicPolicy, NearestNeighborPolicy, NullPolicy, ReplayPolicy,
};
pub use eval::{evaluate, evaluate_with, random_scenario, AttemptEnd, EpisodeResult, EvalConfig, EvalReport, Scenario};
pub use features::{featurize, FeatureConfig, FeatureVector};
pub use loss::{loss, packed_loss_and_gradient, weighted_loss, LossWeights};
pub use network::{Adam, Architecture, Network, Normalizer};
pub use train::{batch_loss_and_gradient, train, trajectory_samples, Sample, TrainConfig, TrainLog};

use crate::dataset::to_canonical_json;
use crate::geometry::{Rotation, SE3Pose, Vec3};
use crate::kinematics::{HandModel, HandState, JointConfig};
use crate::retarget::ObservedFrame;
use crate::sim::{ObjectSpec, SimError, Simulator};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// One action: palm motion in the current palm frame plus finger targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    /// Palm-frame translation (m).
    pub delta_translation: Vec3,
    /// Palm-frame rotation vector (rad).
    pub delta_rotation: Vec3,
    /// Absolute finger joint targets (rad).
    pub fingers: Vec<f64>,
}

impl PolicyOutput {
    /// Label that moves `current` to `target`.
    pub fn from_target(current: &HandState, target: &HandState) -> Self {
        let rel = current.palm_pose.inverse().compose(&target.palm_pose);
        Self {
            delta_translation: rel.translation,
            delta_rotation: rel.rotation.to_rotation_vector(),
            fingers: target.joints.angles.clone(),
        }
    }

    /// Hand target for this action from `current`; finger targets are
    /// clamped to the joint limits. Non-finite outputs hold the current state.
    pub fn to_target(&self, model: &HandModel, current: &HandState) -> HandState {
        let finite = self.pack().iter().all(|v| v.is_finite());
        if !finite || self.fingers.len() != model.dof_count() {
            return current.clone();
        }
        let delta = SE3Pose::new(self.delta_translation, Rotation::from_rotation_vector(&self.delta_rotation));
        let pose = current.palm_pose.compose(&delta);
        let pose = SE3Pose::new(pose.translation, pose.rotation.renormalized());
        HandState::new(pose, model.clamp_to_limits(&JointConfig::new(self.fingers.clone())))
    }

    /// `[Δt, Δr, q]`.
    pub fn pack(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(6 + self.fingers.len());
        v.extend(self.delta_translation.iter());
        v.extend(self.delta_rotation.iter());
        v.extend(&self.fingers);
        v
    }

    pub fn unpack(v: &[f64]) -> Self {
        Self {
            delta_translation: Vec3::new(v[0], v[1], v[2]),
            delta_rotation: Vec3::new(v[3], v[4], v[5]),
            fingers: v[6..].to_vec(),
        }
    }

    /// Zero palm motion, fingers held where they are.
    pub fn hold(current: &HandState) -> Self {
        Self {
            delta_translation: Vec3::zeros(),
            delta_rotation: Vec3::zeros(),
            fingers: current.joints.angles.clone(),
        }
    }
}

/// A closed-loop controller queried once per control step.
pub trait Policy {
    /// Called at the start of every attempt with the first observation.
    fn reset(&mut self, sim: &Simulator, object: &ObjectSpec, first: &ObservedFrame);
    /// Next action given all observations of the attempt so far (oldest first).
    fn act(&mut self, sim: &Simulator, object: &ObjectSpec, history: &[ObservedFrame]) -> PolicyOutput;
}

pub const CHECKPOINT_FORMAT: &str = "dexgrasp-policy";

/// Trained network with the feature and training settings it was built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpPolicy {
    pub format: String,
    pub hand_model_hash: String,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    /// Hash of the document that configured the run, when there was one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub network: Network,
}

impl MlpPolicy {
    /// Action for the observations of an attempt so far (oldest first).
    pub fn predict(&self, model: &HandModel, object: &ObjectSpec, history: &[ObservedFrame]) -> Result<PolicyOutput, PolicyError> {
        let f = featurize(model, &self.features, history, object)?;
        Ok(PolicyOutput::unpack(&self.network.predict(&f)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = to_canonical_json(self).expect("policy serializes");
        out.push(b'\n');
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| PolicyError::Checkpoint(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let bytes = std::fs::read(path).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        let p: MlpPolicy = serde_json::from_slice(&bytes).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        if p.format != CHECKPOINT_FORMAT {
            return Err(PolicyError::Checkpoint(format!("unknown format `{}`", p.format)));
        }
        if p.network.params.len() != p.network.arch.parameter_count() {
            return Err(PolicyError::Checkpoint("parameter count does not match the architecture".into()));
        }
        Ok(p)
    }
}

impl Policy for MlpPolicy {
    fn reset(&mut self, _: &Simulator, _: &ObjectSpec, _: &ObservedFrame) {}

    fn act(&mut self, sim: &Simulator, object: &ObjectSpec, history: &[ObservedFrame]) -> PolicyOutput {
        match self.predict(sim.model(), object, history) {
            Ok(out) => out,
            Err(_) => PolicyOutput::hold(&history[history.len() - 1].hand),
        }
    }
}
