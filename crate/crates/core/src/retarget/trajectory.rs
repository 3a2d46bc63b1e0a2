//! Demonstration and robot trajectory containers.

use serde::{Deserialize, Serialize};

use crate::geometry::{SE3Pose, Vec3};
use crate::kinematics::{HandModel, HandState, HumanFrame};
use crate::sim::PhysicsParams;

/// A recorded human demonstration: 21 keypoints plus object pose per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanDemo {
    pub id: String,
    pub object: String,
    pub frames: Vec<HumanFrame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retargeted,
    Templated,
    Refined,
    Augmented,
    Funneled,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Retargeted,
        Stage::Templated,
        Stage::Refined,
        Stage::Augmented,
        Stage::Funneled,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Retargeted => "retargeted",
            Stage::Templated => "templated",
            Stage::Refined => "refined",
            Stage::Augmented => "augmented",
            Stage::Funneled => "funneled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajFrame {
    pub hand: HandState,
    pub object_pose: SE3Pose,
}

/// Simulated state at one control step of the verifying replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservedFrame {
    pub hand: HandState,
    pub object_pose: SE3Pose,
    pub contacts: Vec<bool>,
}

/// Where a trajectory came from and how it was verified.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// Id of the trajectory this one was derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Correlated-sampling interpolation scalar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Parameters of the verifying replay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physics: Option<PhysicsParams>,
    /// Rigid transform applied by template matching.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<SE3Pose>,
    /// Translation applied by augmentation (m).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec3>,
    /// Number of prepended free-space frames (funneling).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix_frames: Option<usize>,
    /// Randomized draws passed in the stability check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability_draws: Option<usize>,
    #[serde(default)]
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotTrajectory {
    pub id: String,
    pub source_demo_id: String,
    pub object: String,
    pub stage: Stage,
    /// Planned states; frame 0 is the start, frame `t + 1` equals action `t`.
    pub frames: Vec<TrajFrame>,
    pub actions: Vec<HandState>,
    #[serde(default)]
    pub provenance: Provenance,
    /// Simulated replay under `provenance.physics`, one entry per frame.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observed: Vec<ObservedFrame>,
}

impl RobotTrajectory {
    /// Builds frames from a start state and actions, holding `object_poses`.
    pub fn from_plan(
        id: impl Into<String>,
        source_demo_id: impl Into<String>,
        object: impl Into<String>,
        stage: Stage,
        start: HandState,
        actions: Vec<HandState>,
        object_poses: &[SE3Pose],
    ) -> Self {
        let mut frames = Vec::with_capacity(actions.len() + 1);
        frames.push(TrajFrame {
            hand: start,
            object_pose: object_poses[0],
        });
        for (i, a) in actions.iter().enumerate() {
            let pose = object_poses.get(i + 1).copied().unwrap_or(*object_poses.last().expect("non-empty"));
            frames.push(TrajFrame {
                hand: a.clone(),
                object_pose: pose,
            });
        }
        Self {
            id: id.into(),
            source_demo_id: source_demo_id.into(),
            object: object.into(),
            stage,
            frames,
            actions,
            provenance: Provenance::default(),
            observed: Vec::new(),
        }
    }

    pub fn start(&self) -> &HandState {
        &self.frames[0].hand
    }

    pub fn initial_object_pose(&self) -> &SE3Pose {
        &self.frames[0].object_pose
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks the structural invariants against a hand model.
    pub fn validate(&self, model: &HandModel) -> Result<(), String> {
        if self.frames.is_empty() {
            return Err(format!("trajectory `{}` has no frames", self.id));
        }
        if self.actions.len() + 1 != self.frames.len() {
            return Err(format!(
                "trajectory `{}`: {} actions for {} frames",
                self.id,
                self.actions.len(),
                self.frames.len()
            ));
        }
        let dof = model.dof_count();
        for (i, f) in self.frames.iter().enumerate() {
            if f.hand.joints.len() != dof {
                return Err(format!("trajectory `{}` frame {i}: dof {} != {dof}", self.id, f.hand.joints.len()));
            }
            if !model.within_limits(&f.hand.joints) {
                return Err(format!("trajectory `{}` frame {i}: joints outside limits", self.id));
            }
        }
        for (i, a) in self.actions.iter().enumerate() {
            if a.joints.len() != dof || !model.within_limits(&a.joints) {
                return Err(format!("trajectory `{}` action {i}: bad joint config", self.id));
            }
            if a.max_gap(&self.frames[i + 1].hand) > 1e-12 {
                return Err(format!("trajectory `{}` action {i} differs from frame {}", self.id, i + 1));
            }
        }
        if !self.observed.is_empty() && self.observed.len() != self.frames.len() {
            return Err(format!("trajectory `{}`: observed length mismatch", self.id));
        }
        Ok(())
    }
}
