//! Rigid template matching of trajectories onto new object poses.

use serde::{Deserialize, Serialize};

use crate::geometry::{Rotation, SE3Pose, Vec3};
use crate::retarget::{Provenance, RobotTrajectory, Stage};

use super::RefineError;

/// Maps a trajectory onto a new object pose: palm and object poses are
/// left-multiplied by `target ∘ source⁻¹`, finger joints are copied.
pub fn template_transform(traj: &RobotTrajectory, source_pose: &SE3Pose, target_pose: &SE3Pose) -> Result<RobotTrajectory, RefineError> {
    if !matches!(traj.stage, Stage::Retargeted | Stage::Refined) {
        return Err(RefineError::InvalidInput(format!(
            "template matching needs a retargeted or refined trajectory, `{}` is {}",
            traj.id,
            traj.stage.as_str()
        )));
    }
    let t = target_pose.compose(&source_pose.inverse());
    let mut out = traj.clone();
    for f in out.frames.iter_mut() {
        f.hand.palm_pose = t.compose(&f.hand.palm_pose);
        f.object_pose = t.compose(&f.object_pose);
    }
    for a in out.actions.iter_mut() {
        a.palm_pose = t.compose(&a.palm_pose);
    }
    out.stage = Stage::Templated;
    out.observed.clear();
    out.provenance = Provenance {
        parent: Some(traj.id.clone()),
        template: Some(t),
        ..Provenance::default()
    };
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    /// Yaw grid spacing (degrees).
    pub yaw_step_deg: f64,
    /// Half-open yaw range `[min, max)` of grid targets (degrees).
    pub yaw_min_deg: f64,
    pub yaw_max_deg: f64,
    /// Also target the initial object poses of the other demonstrations.
    pub use_demo_poses: bool,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            yaw_step_deg: 30.0,
            yaw_min_deg: -90.0,
            yaw_max_deg: 90.0,
            use_demo_poses: true,
        }
    }
}

/// Grid values `min, min + step, ...` strictly below `max`, in radians.
pub fn yaw_grid(cfg: &TemplateConfig) -> Vec<f64> {
    if cfg.yaw_step_deg <= 0.0 {
        return Vec::new();
    }
    let n = ((cfg.yaw_max_deg - cfg.yaw_min_deg) / cfg.yaw_step_deg).ceil().max(0.0) as usize;
    (0..n)
        .map(|i| cfg.yaw_min_deg + i as f64 * cfg.yaw_step_deg)
        .filter(|d| *d < cfg.yaw_max_deg)
        .map(f64::to_radians)
        .collect()
}

fn yaw_of(pose: &SE3Pose) -> f64 {
    let x = pose.rotation.rotate(&Vec3::x());
    x.y.atan2(x.x)
}

/// `pose` turned about the table normal through its center to absolute yaw `yaw`.
fn with_yaw(pose: &SE3Pose, yaw: f64) -> SE3Pose {
    let turn = Rotation::from_axis_angle(&Vec3::z(), yaw - yaw_of(pose));
    SE3Pose::new(pose.translation, turn.compose(&pose.rotation).renormalized())
}

/// Templated copies of every trajectory: one per yaw-grid target and, when
/// enabled, one per other trajectory's initial object pose. Ids are
/// `{source}/t{k}`.
pub fn template_targets(trajs: &[RobotTrajectory], cfg: &TemplateConfig) -> Result<Vec<RobotTrajectory>, RefineError> {
    let grid = yaw_grid(cfg);
    let mut out = Vec::new();
    for (i, traj) in trajs.iter().enumerate() {
        let source = *traj.initial_object_pose();
        let mut targets: Vec<SE3Pose> = grid.iter().map(|y| with_yaw(&source, *y)).collect();
        if cfg.use_demo_poses {
            targets.extend(
                trajs
                    .iter()
                    .enumerate()
                    .filter(|(j, o)| *j != i && o.object == traj.object)
                    .map(|(_, o)| *o.initial_object_pose()),
            );
        }
        for (k, target) in targets.iter().enumerate() {
            let mut t = template_transform(traj, &source, target)?;
            t.id = format!("{}/t{k}", traj.id);
            out.push(t);
        }
    }
    Ok(out)
}
