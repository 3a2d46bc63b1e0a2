//! Dataset amplification: template matching across object poses,
//! correlated-sampling refinement with rejection, object-centric translation
//! augmentation, and funneling from diverse initial hand states.

mod augment;
mod correlated;
mod funnel;
mod stable;
mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{augment_one, augment_translation, translate, AugmentConfig, AugmentReport};
pub use correlated::{apply_perturbation, refine, sample_perturbation, NominalStats, PerturbationBounds, RefineBudget, RefineReport};
pub use funnel::{funnel, funnel_distance, nearest_start, FunnelConfig, FunnelError, FunnelWeights, InitialHandDistribution};
pub use stable::{compute_stable_poses, compute_stable_poses_with, StablePose};
pub use template::{template_targets, template_transform, yaw_grid, TemplateConfig};

use crate::kinematics::HandModel;
use crate::retarget::{ObservedFrame, RobotTrajectory};
use crate::sim::{offset_actions, ObjectSpec, RolloutOutcome, SimError, Simulator, SuccessSpec};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("trajectory `{0}` has no stored physics parameters")]
    MissingPhysics(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Derives an independent stream seed from a base seed and two indices.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Open-loop replay of a trajectory under its stored physics parameters,
/// with the stored noise offset applied to every palm target.
pub fn replay(sim: &Simulator, object: &ObjectSpec, traj: &RobotTrajectory, checks: &SuccessSpec) -> Result<RolloutOutcome, RefineError> {
    let params = traj
        .provenance
        .physics
        .ok_or_else(|| RefineError::MissingPhysics(traj.id.clone()))?;
    let actions = offset_actions(&traj.actions, &params.noise_offset());
    Ok(sim.rollout(object, *traj.initial_object_pose(), traj.start(), &actions, params, checks)?)
}

/// Stores a replay's observations and replaces the planned object poses by
/// the simulated ones.
pub fn attach_replay(traj: &mut RobotTrajectory, outcome: &RolloutOutcome) {
    traj.observed = outcome
        .observations
        .iter()
        .map(|o| ObservedFrame {
            hand: o.hand.clone(),
            object_pose: o.object_pose,
            contacts: o.contacts.flags.clone(),
        })
        .collect();
    for (f, o) in traj.frames.iter_mut().zip(&outcome.observations) {
        f.object_pose = o.object_pose;
    }
}

/// Result of re-verifying a set of trajectories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checked: usize,
    pub succeeded: usize,
    pub failed_ids: Vec<String>,
    /// Largest table penetration seen across all replays (m).
    pub max_table_penetration: f64,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.failed_ids.is_empty()
    }
}

/// Replays every trajectory under its stored parameters.
pub fn verify_all<'a>(
    sim: &Simulator,
    objects: &[ObjectSpec],
    trajectories: impl IntoIterator<Item = &'a RobotTrajectory>,
    checks: &SuccessSpec,
) -> Result<VerifyReport, RefineError> {
    let mut report = VerifyReport::default();
    for traj in trajectories {
        let object = objects
            .iter()
            .find(|o| o.name == traj.object)
            .ok_or_else(|| RefineError::InvalidInput(format!("unknown object `{}`", traj.object)))?;
        report.checked += 1;
        let ok = match replay(sim, object, traj, checks) {
            Ok(out) => {
                report.max_table_penetration = report.max_table_penetration.max(out.report.max_table_penetration);
                out.success
            }
            Err(RefineError::Sim(SimError::InvalidSetup(_) | SimError::NumericalBlowup { .. })) => false,
            Err(e) => return Err(e),
        };
        if ok {
            report.succeeded += 1;
        } else {
            report.failed_ids.push(traj.id.clone());
        }
    }
    Ok(report)
}

/// Checks dof and limits of every trajectory against the model.
pub fn validate_all<'a>(model: &HandModel, trajectories: impl IntoIterator<Item = &'a RobotTrajectory>) -> Result<(), RefineError> {
    for t in trajectories {
        t.validate(model).map_err(RefineError::InvalidInput)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_per_index() {
        let a = derive_seed(1, 0, 0);
        assert_ne!(a, derive_seed(1, 0, 1));
        assert_ne!(a, derive_seed(1, 1, 0));
        assert_ne!(a, derive_seed(2, 0, 0));
        assert_eq!(a, derive_seed(1, 0, 0));
    }
}
