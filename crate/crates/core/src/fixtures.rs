//! Bundled objects and a scripted grasp generator used to synthesize
//! demonstrations and test fixtures.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Rotation, SE3Pose, Vec3};
use crate::kinematics::{human_keypoint_index, HandModel, HandState, HumanFrame, JointConfig, HUMAN_KEYPOINT_NAMES};
use crate::retarget::HumanDemo;
use crate::sim::{ObjectSpec, PhysicsParams, Shape, Simulator, SuccessSpec};

pub fn box_object() -> ObjectSpec {
    ObjectSpec::new("box", Shape::Box { w: 0.05, d: 0.15, h: 0.10 }, 0.2)
}

pub fn can_object() -> ObjectSpec {
    ObjectSpec::new("can", Shape::Cylinder { r: 0.03, h: 0.10 }, 0.15)
}

pub fn block_object() -> ObjectSpec {
    ObjectSpec::new("block", Shape::Box { w: 0.06, d: 0.06, h: 0.09 }, 0.18)
}

pub fn standard_objects() -> Vec<ObjectSpec> {
    vec![box_object(), can_object(), block_object()]
}

/// Upright resting pose at `(x, y)` with the given yaw.
pub fn upright_pose(object: &ObjectSpec, x: f64, y: f64, yaw: f64) -> SE3Pose {
    let rotation = Rotation::from_axis_angle(&Vec3::z(), yaw);
    let mut pose = SE3Pose::new(Vec3::new(x, y, 0.0), rotation);
    pose.translation.z = object.resting_height(&pose);
    pose
}

/// Palm pointing down with fingers along world `+x` rotated by `yaw`.
pub fn palm_down(yaw: f64) -> Rotation {
    Rotation::from_axis_angle(&Vec3::z(), yaw).compose(&Rotation::from_axis_angle(&Vec3::x(), std::f64::consts::PI))
}

/// Shape of a scripted top-down grasp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspStyle {
    /// Gap between the palm sphere and the object top at grasp height (m).
    pub palm_clearance: f64,
    pub approach_height: f64,
    pub lift_height: f64,
    /// Closure beyond first contact, in closure-parameter units.
    pub squeeze: f64,
    /// Palm yaw relative to the object's grasp axis (rad).
    pub yaw_offset: f64,
    /// Palm offset from the object center in the horizontal plane (m).
    pub offset_x: f64,
    pub offset_y: f64,
    pub descend_frames: usize,
    pub close_frames: usize,
    pub settle_frames: usize,
    pub lift_frames: usize,
    pub hold_frames: usize,
}

impl Default for GraspStyle {
    fn default() -> Self {
        Self {
            palm_clearance: 0.03,
            approach_height: 0.06,
            lift_height: 0.16,
            squeeze: 0.25,
            yaw_offset: 0.0,
            offset_x: 0.0,
            offset_y: 0.0,
            descend_frames: 8,
            close_frames: 6,
            settle_frames: 2,
            lift_frames: 12,
            hold_frames: 8,
        }
    }
}

/// One-parameter finger closure: `0` is open, `1` fully curled. Joint
/// order per finger is abduction, mcp, pip, dip.
pub fn closure_config(model: &HandModel, s: f64) -> JointConfig {
    let open = [0.0, 1.2, 0.0, 0.0];
    let closed = [0.0, 1.6, 1.0, 0.6];
    let angles = (0..model.dof_count())
        .map(|j| {
            let k = j % 4;
            open[k] + (closed[k] - open[k]) * s
        })
        .collect();
    model.clamp_to_limits(&JointConfig::new(angles))
}

/// Smallest clearance between any fingertip-chain sphere and the object.
fn finger_clearance(model: &HandModel, object: &ObjectSpec, object_pose: &SE3Pose, hand: &HandState) -> f64 {
    let cfg = crate::sim::SimConfig::default();
    let kps = model.keypoint_positions(hand).expect("dof matches");
    let palm = model.palm_keypoint_index();
    kps.iter()
        .enumerate()
        .filter(|(i, _)| *i != palm && !model.keypoints()[*i].name.ends_with("base"))
        .map(|(i, p)| {
            let q = object.query(&object_pose.inverse_transform_point(p));
            q.distance - cfg.sphere_radius(&model.keypoints()[i].name)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Closure parameter at which the fingers first touch the object.
pub fn contact_closure(model: &HandModel, object: &ObjectSpec, object_pose: &SE3Pose, palm: &SE3Pose) -> f64 {
    let at = |s: f64| finger_clearance(model, object, object_pose, &HandState::new(*palm, closure_config(model, s)));
    if at(0.0) <= 0.0 {
        return 0.0;
    }
    if at(1.0) > 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if at(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Yaw of an object's local x axis about the table normal.
pub fn object_yaw(pose: &SE3Pose) -> f64 {
    let x = pose.rotation.rotate(&Vec3::x());
    x.y.atan2(x.x)
}

/// Scripted top-down grasp: approach, descend, close, lift, hold. Returns
/// the hand state at every frame; frame 0 is the start state.
pub fn design_grasp(model: &HandModel, object: &ObjectSpec, object_pose: &SE3Pose, style: &GraspStyle) -> Vec<HandState> {
    let top = object_pose.translation.z + object.resting_height(object_pose);
    let palm_z = top + 0.025 + style.palm_clearance;
    let rot = palm_down(object_yaw(object_pose) + style.yaw_offset);
    let c = object_pose.translation;
    let grasp_palm = SE3Pose::new(Vec3::new(c.x + style.offset_x, c.y + style.offset_y, palm_z), rot);
    let mut pre_palm = grasp_palm;
    pre_palm.translation.z += style.approach_height;
    let mut lift_palm = grasp_palm;
    lift_palm.translation.z += style.lift_height;

    let s_contact = contact_closure(model, object, object_pose, &grasp_palm);
    let open = closure_config(model, 0.0);
    let squeezed = closure_config(model, (s_contact + style.squeeze).clamp(0.0, 1.0));

    let mut frames = vec![HandState::new(pre_palm, open.clone())];
    for i in 1..=style.descend_frames {
        let t = i as f64 / style.descend_frames as f64;
        frames.push(HandState::new(pre_palm.interpolate(&grasp_palm, t), open.clone()));
    }
    for i in 1..=style.close_frames {
        let t = i as f64 / style.close_frames as f64;
        frames.push(HandState::new(grasp_palm, open.lerp(&squeezed, t)));
    }
    for _ in 0..style.settle_frames {
        frames.push(HandState::new(grasp_palm, squeezed.clone()));
    }
    for i in 1..=style.lift_frames {
        let t = i as f64 / style.lift_frames as f64;
        frames.push(HandState::new(grasp_palm.interpolate(&lift_palm, t), squeezed.clone()));
    }
    for _ in 0..style.hold_frames {
        frames.push(HandState::new(lift_palm, squeezed.clone()));
    }
    frames
}

/// Object, start pose and frames of the bundled golden box grasp.
pub fn golden_grasp(model: &HandModel) -> (ObjectSpec, SE3Pose, Vec<HandState>) {
    let object = box_object();
    let pose = upright_pose(&object, 0.02, -0.01, 0.3);
    let frames = design_grasp(model, &object, &pose, &GraspStyle::default());
    (object, pose, frames)
}

/// Robot finger name and the human finger it stands in for.
const HUMAN_FINGER_OF: [(&str, &str, [&str; 3]); 4] = [
    ("index", "index", ["mcp", "pip", "dip"]),
    ("middle", "middle", ["mcp", "pip", "dip"]),
    ("ring", "ring", ["mcp", "pip", "dip"]),
    ("thumb", "thumb", ["mcp", "ip", "cmc"]),
];

/// Human keypoints consistent with a robot state: fingertips coincide with
/// the robot's, and per-finger displacements to the tip are the robot's
/// divided by `s_r`. The pinky copies the ring finger shifted outward.
pub fn synth_human_frame(model: &HandModel, state: &HandState, object_pose: &SE3Pose, s_r: f64) -> HumanFrame {
    let kps = model.keypoint_positions(state).expect("dof matches");
    let robot = |name: &str| kps[model.keypoint_index(name).expect("bundled keypoint")];
    let mut human = vec![Vec3::zeros(); HUMAN_KEYPOINT_NAMES.len()];
    let mut set = |name: &str, p: Vec3| human[human_keypoint_index(name).expect("human landmark")] = p;
    set("wrist", robot("palm"));
    for (r, h, [l1, l2, l3]) in HUMAN_FINGER_OF {
        let tip = robot(&format!("{r}_tip"));
        let base = robot(&format!("{r}_base"));
        let mid = robot(&format!("{r}_mid"));
        let dip = robot(&format!("{r}_dip"));
        set(&format!("{h}_tip"), tip);
        set(&format!("{h}_{l1}"), tip - (tip - base) / s_r);
        set(&format!("{h}_{l2}"), tip - (tip - mid) / s_r);
        if r == "thumb" {
            set(&format!("{h}_{l3}"), (robot("palm") + tip - (tip - base) / s_r) * 0.5);
        } else {
            set(&format!("{h}_{l3}"), tip - (tip - dip) / s_r);
        }
    }
    for joint in ["mcp", "pip", "dip", "tip"] {
        let ring = human[human_keypoint_index(&format!("ring_{joint}")).unwrap()];
        let middle = human[human_keypoint_index(&format!("middle_{joint}")).unwrap()];
        human[human_keypoint_index(&format!("pinky_{joint}")).unwrap()] = ring + (ring - middle);
    }
    HumanFrame {
        keypoints: human,
        palm_orientation: state.palm_pose.rotation,
        object_pose: *object_pose,
    }
}

/// Human demo whose frames are synthesized from robot states; object poses
/// come from `object_poses` (one per state).
pub fn synth_demo(
    id: &str,
    model: &HandModel,
    object: &ObjectSpec,
    states: &[HandState],
    object_poses: &[SE3Pose],
    s_r: f64,
) -> HumanDemo {
    let frames = states
        .iter()
        .zip(object_poses)
        .map(|(s, p)| synth_human_frame(model, s, p, s_r))
        .collect();
    HumanDemo {
        id: id.to_string(),
        object: object.name.clone(),
        frames,
    }
}

/// Object poses from a noise-free nominal replay of a scripted grasp.
/// Failed or invalid replays keep the initial pose.
pub fn replay_object_poses(sim: &Simulator, object: &ObjectSpec, pose: &SE3Pose, states: &[HandState]) -> Vec<SE3Pose> {
    let params = PhysicsParams {
        noise_std: 0.0,
        ..PhysicsParams::nominal(object)
    };
    match sim.rollout(object, *pose, &states[0], &states[1..], params, &SuccessSpec::default()) {
        Ok(out) => out.observations.iter().map(|o| o.object_pose).collect(),
        Err(_) => vec![*pose; states.len()],
    }
}

/// Scripted demonstration set: `per_object` demos for each object with
/// seeded object placement and grasp style. Some demos squeeze too little
/// to survive randomized physics; refinement is expected to repair them.
pub fn synthetic_demos(sim: &Simulator, objects: &[ObjectSpec], per_object: usize, s_r: f64, seed: u64) -> Vec<HumanDemo> {
    synthetic_demos_with_states(sim, objects, per_object, s_r, seed).into_iter().map(|(d, _)| d).collect()
}

/// [`synthetic_demos`] paired with the robot states each demo was
/// synthesized from.
pub fn synthetic_demos_with_states(sim: &Simulator, objects: &[ObjectSpec], per_object: usize, s_r: f64, seed: u64) -> Vec<(HumanDemo, Vec<HandState>)> {
    let model = sim.model();
    let mut demos = Vec::new();
    for (k, object) in objects.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64 + 1) << 32));
        for i in 0..per_object {
            let pose = upright_pose(
                object,
                rng.random_range(-0.04..0.04),
                rng.random_range(-0.04..0.04),
                rng.random_range(-FRAC_PI_2..FRAC_PI_2),
            );
            let style = GraspStyle {
                squeeze: [0.05, 0.3, 0.15, 0.25, 0.35][i % 5],
                yaw_offset: rng.random_range(-0.15..0.15),
                offset_x: rng.random_range(-0.006..0.006),
                offset_y: rng.random_range(-0.006..0.006),
                ..GraspStyle::default()
            };
            let states = design_grasp(model, object, &pose, &style);
            let poses = replay_object_poses(sim, object, &pose, &states);
            let demo = synth_demo(&format!("{}-demo-{i:02}", object.name), model, object, &states, &poses, s_r);
            demos.push((demo, states));
        }
    }
    demos
}
