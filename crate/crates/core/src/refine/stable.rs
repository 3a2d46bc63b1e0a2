//! Canonical resting poses of primitive objects.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::geometry::{Rotation, SE3Pose, Vec3};
use crate::kinematics::{HandModel, HandState, JointConfig};
use crate::sim::{ObjectSpec, PhysicsParams, Shape, SimConfig, Simulator};

/// Object resting on the table on one support face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StablePose {
    pub pose: SE3Pose,
    /// Local face touching the table, e.g. `-z` or `side`.
    pub support: String,
}

/// Settling tolerance over one second (m).
const SETTLE_DRIFT: f64 = 1e-3;

fn candidates(object: &ObjectSpec) -> Vec<(&'static str, Rotation)> {
    let rx = |a: f64| Rotation::from_axis_angle(&Vec3::x(), a);
    let ry = |a: f64| Rotation::from_axis_angle(&Vec3::y(), a);
    match object.shape {
        Shape::Box { .. } => vec![
            ("-z", Rotation::identity()),
            ("+z", rx(PI)),
            ("+x", ry(FRAC_PI_2)),
            ("-x", ry(-FRAC_PI_2)),
            ("+y", rx(-FRAC_PI_2)),
            ("-y", rx(FRAC_PI_2)),
        ],
        Shape::Cylinder { .. } => vec![("-z", Rotation::identity()), ("+z", rx(PI)), ("side", rx(FRAC_PI_2))],
    }
}

/// Face-resting poses at the table origin that survive one second of
/// settling with drift below 1 mm.
pub fn compute_stable_poses(object: &ObjectSpec) -> Vec<StablePose> {
    let sim = Simulator::new(HandModel::pincher(), SimConfig::default());
    compute_stable_poses_with(&sim, object)
}

/// As [`compute_stable_poses`], settling in `sim` with its hand parked far
/// above the table.
pub fn compute_stable_poses_with(sim: &Simulator, object: &ObjectSpec) -> Vec<StablePose> {
    let parked = HandState::new(
        SE3Pose::from_translation(Vec3::new(0.0, 0.0, 1.0)),
        sim.model().clamp_to_limits(&JointConfig::zeros(sim.model().dof_count())),
    );
    let params = PhysicsParams {
        noise_std: 0.0,
        ..PhysicsParams::nominal(object)
    };
    let steps = sim.config().control_rate_hz.round() as usize;
    candidates(object)
        .into_iter()
        .filter_map(|(support, rotation)| {
            let mut pose = SE3Pose::new(Vec3::zeros(), rotation);
            pose.translation.z = object.resting_height(&pose);
            let mut world = sim.spawn(object, pose, parked.clone(), params).ok()?;
            for _ in 0..steps {
                world.step(&parked).ok()?;
            }
            let drift = (world.object_pose().translation - pose.translation).norm();
            (drift < SETTLE_DRIFT).then(|| StablePose {
                pose,
                support: support.to_string(),
            })
        })
        .collect()
}
