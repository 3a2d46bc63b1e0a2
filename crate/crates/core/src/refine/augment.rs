//! Object-centric translation augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::retarget::{Provenance, RobotTrajectory, Stage};
use crate::sim::{ObjectSpec, SimError, Simulator, SuccessSpec};

use super::correlated::id_hash;
use super::{attach_replay, derive_seed, replay, RefineError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Offsets proposed per refined trajectory.
    pub offsets_per_trajectory: usize,
    /// Offsets are uniform in `[-max_offset, max_offset]` along x and y (m).
    pub max_offset: f64,
    pub seed: u64,
    pub checks: SuccessSpec,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            offsets_per_trajectory: 4,
            max_offset: 0.05,
            seed: 0,
            checks: SuccessSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub proposed: usize,
    pub retained: usize,
    pub off_table: usize,
    pub failed: usize,
}

/// Moves the object's initial pose and every palm pose by `offset`.
pub fn translate(traj: &RobotTrajectory, offset: &Vec3) -> RobotTrajectory {
    let mut out = traj.clone();
    for f in out.frames.iter_mut() {
        f.hand.palm_pose.translation += offset;
        f.object_pose.translation += offset;
    }
    for a in out.actions.iter_mut() {
        a.palm_pose.translation += offset;
    }
    out.observed.clear();
    out
}

fn on_table(sim: &Simulator, object: &ObjectSpec, traj: &RobotTrajectory) -> bool {
    let c = traj.initial_object_pose().translation;
    let limit = sim.config().table_half_extent - object.bounding_radius();
    c.x.abs() <= limit && c.y.abs() <= limit
}

/// Translates one refined trajectory and keeps it iff it stays on the table
/// and still succeeds under the parent's stored physics parameters.
pub fn augment_one(
    sim: &Simulator,
    object: &ObjectSpec,
    parent: &RobotTrajectory,
    offset: &Vec3,
    checks: &SuccessSpec,
) -> Result<Option<RobotTrajectory>, RefineError> {
    let mut cand = translate(parent, offset);
    if !on_table(sim, object, &cand) {
        return Ok(None);
    }
    cand.stage = Stage::Augmented;
    cand.provenance = Provenance {
        parent: Some(parent.id.clone()),
        offset: Some(*offset),
        physics: parent.provenance.physics,
        ..Provenance::default()
    };
    let out = match replay(sim, object, &cand, checks) {
        Ok(o) => o,
        Err(RefineError::Sim(SimError::InvalidSetup(_) | SimError::NumericalBlowup { .. })) => return Ok(None),
        Err(e) => return Err(e),
    };
    if !out.success {
        return Ok(None);
    }
    cand.provenance.verified = true;
    attach_replay(&mut cand, &out);
    Ok(Some(cand))
}

/// Proposes seeded horizontal offsets for every refined trajectory and keeps
/// the verified ones. Ids are `{parent}/a{j}`.
pub fn augment_translation(
    sim: &Simulator,
    refined: &[RobotTrajectory],
    object: &ObjectSpec,
    cfg: &AugmentConfig,
) -> Result<(Vec<RobotTrajectory>, AugmentReport), RefineError> {
    let mut report = AugmentReport::default();
    let mut out = Vec::new();
    for parent in refined {
        if parent.stage != Stage::Refined {
            return Err(RefineError::InvalidInput(format!("`{}` is not a refined trajectory", parent.id)));
        }
        for j in 0..cfg.offsets_per_trajectory {
            let seed = derive_seed(cfg.seed, id_hash(&parent.id), j as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = cfg.max_offset;
            let offset = Vec3::new(rng.random_range(-m..=m), rng.random_range(-m..=m), 0.0);
            report.proposed += 1;
            let moved = translate(parent, &offset);
            if !on_table(sim, object, &moved) {
                report.off_table += 1;
                continue;
            }
            match augment_one(sim, object, parent, &offset, &cfg.checks)? {
                Some(mut t) => {
                    t.id = format!("{}/a{j}", parent.id);
                    t.provenance.seed = Some(seed);
                    report.retained += 1;
                    out.push(t);
                }
                None => report.failed += 1,
            }
        }
    }
    Ok((out, report))
}
