//! Articulated hand models: schema loading, validation and forward kinematics.
//!
//! The hand base is a free-floating palm whose pose is part of [`HandState`];
//! every other link hangs off it through a fixed transform followed by an
//! optional revolute joint.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{Rotation, SE3Pose, Vec3};

/// Name of the keypoint every model must define exactly once.
pub const PALM_KEYPOINT: &str = "palm";

const FOUR_FINGER_JSON: &str = include_str!("../assets/four_finger_hand.json");
const PINCHER_JSON: &str = include_str!("../assets/pincher.json");

/// One violated constraint, located by a JSON-path-like string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaViolation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("hand model parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("hand model schema errors: {}", format_violations(.0))]
    Schema(Vec<SchemaViolation>),
    #[error("joint configuration has {got} angles, model has {expected} dof")]
    DofMismatch { expected: usize, got: usize },
    #[error("unknown keypoint `{0}`")]
    UnknownKeypoint(String),
}

fn format_violations(v: &[SchemaViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// On-disk hand description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandModelDoc {
    pub links: Vec<LinkDoc>,
    pub joints: Vec<JointDoc>,
    pub keypoints: Vec<KeypointDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    pub name: String,
    pub parent: Option<String>,
    pub xyz: [f64; 3],
    /// `(w, x, y, z)`.
    pub quat: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDoc {
    pub name: String,
    pub child_link: String,
    pub axis: [f64; 3],
    pub limits: [f64; 2],
    pub max_torque: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointDoc {
    pub name: String,
    pub link: String,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    /// Fixed transform from the parent link frame to this link's joint frame.
    pub origin: SE3Pose,
    pub joint: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub link: usize,
    pub axis: Vec3,
    pub lower: f64,
    pub upper: f64,
    pub max_torque: f64,
}

#[derive(Debug, Clone)]
pub struct Keypoint {
    pub name: String,
    pub link: usize,
    pub offset: Vec3,
}

/// Validated kinematic tree. Links are stored parents-first.
#[derive(Debug, Clone)]
pub struct HandModel {
    links: Vec<Link>,
    joints: Vec<Joint>,
    keypoints: Vec<Keypoint>,
    palm_keypoint: usize,
    /// Joint indices from the root down to each keypoint's link.
    keypoint_chains: Vec<Vec<usize>>,
    doc: HandModelDoc,
}

/// Joint angles in model joint order (rad).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig {
    pub angles: Vec<f64>,
}

impl JointConfig {
    pub fn new(angles: Vec<f64>) -> Self {
        Self { angles }
    }

    pub fn zeros(dof: usize) -> Self {
        Self { angles: vec![0.0; dof] }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn distance(&self, other: &JointConfig) -> f64 {
        self.angles
            .iter()
            .zip(&other.angles)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn lerp(&self, other: &JointConfig, t: f64) -> JointConfig {
        JointConfig::new(
            self.angles
                .iter()
                .zip(&other.angles)
                .map(|(a, b)| a + (b - a) * t)
                .collect(),
        )
    }
}

/// Floating palm pose plus finger joint angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandState {
    pub palm_pose: SE3Pose,
    pub joints: JointConfig,
}

impl HandState {
    pub fn new(palm_pose: SE3Pose, joints: JointConfig) -> Self {
        Self { palm_pose, joints }
    }

    /// Linear in translation and joints, spherical in rotation.
    pub fn interpolate(&self, other: &HandState, t: f64) -> HandState {
        HandState {
            palm_pose: self.palm_pose.interpolate(&other.palm_pose, t),
            joints: self.joints.lerp(&other.joints, t),
        }
    }

    /// Largest of palm translation gap, palm rotation gap and joint gap.
    pub fn max_gap(&self, other: &HandState) -> f64 {
        let j = self
            .joints
            .angles
            .iter()
            .zip(&other.joints.angles)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        self.palm_pose.distance_to(&other.palm_pose).max(j)
    }
}

/// Landmark names of the 21-point human hand convention (wrist, then
/// four landmarks per finger from thumb to pinky, base to tip).
pub const HUMAN_KEYPOINT_NAMES: [&str; 21] = [
    "wrist",
    "thumb_cmc",
    "thumb_mcp",
    "thumb_ip",
    "thumb_tip",
    "index_mcp",
    "index_pip",
    "index_dip",
    "index_tip",
    "middle_mcp",
    "middle_pip",
    "middle_dip",
    "middle_tip",
    "ring_mcp",
    "ring_pip",
    "ring_dip",
    "ring_tip",
    "pinky_mcp",
    "pinky_pip",
    "pinky_dip",
    "pinky_tip",
];

pub fn human_keypoint_index(name: &str) -> Option<usize> {
    HUMAN_KEYPOINT_NAMES.iter().position(|n| *n == name)
}

/// One motion-capture frame of a human demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanFrame {
    pub keypoints: Vec<Vec3>,
    pub palm_orientation: Rotation,
    pub object_pose: SE3Pose,
}

impl HumanFrame {
    pub fn keypoint(&self, name: &str) -> Option<&Vec3> {
        human_keypoint_index(name).and_then(|i| self.keypoints.get(i))
    }

    pub fn is_valid(&self) -> bool {
        self.keypoints.len() == HUMAN_KEYPOINT_NAMES.len()
            && self.keypoints.iter().all(|k| k.iter().all(|c| c.is_finite()))
    }
}

/// Parses and validates a hand description document (JSON).
pub fn load_hand_model(description: &str) -> Result<HandModel, ModelError> {
    let doc: HandModelDoc = serde_json::from_str(description)?;
    HandModel::from_doc(doc)
}

impl HandModel {
    /// Bundled 16-dof, four-finger hand (three fingers plus an opposed thumb).
    pub fn four_finger() -> HandModel {
        load_hand_model(FOUR_FINGER_JSON).expect("bundled four-finger model is valid")
    }

    /// Bundled 2-dof toy pincher.
    pub fn pincher() -> HandModel {
        load_hand_model(PINCHER_JSON).expect("bundled pincher model is valid")
    }

    pub fn from_doc(doc: HandModelDoc) -> Result<HandModel, ModelError> {
        let mut errs = Vec::new();
        let mut push = |path: String, message: String| errs.push(SchemaViolation { path, message });

        let mut link_index: HashMap<&str, usize> = HashMap::new();
        for (i, l) in doc.links.iter().enumerate() {
            if link_index.insert(l.name.as_str(), i).is_some() {
                push(format!("links[{i}].name"), format!("duplicate link `{}`", l.name));
            }
            let qn = l.quat.iter().map(|c| c * c).sum::<f64>().sqrt();
            if (qn - 1.0).abs() > 1e-6 {
                push(format!("links[{i}].quat"), format!("link `{}` quaternion norm {qn} is not 1", l.name));
            }
            if !l.xyz.iter().all(|c| c.is_finite()) {
                push(format!("links[{i}].xyz"), "non-finite offset".into());
            }
        }
        let roots: Vec<usize> = (0..doc.links.len()).filter(|&i| doc.links[i].parent.is_none()).collect();
        if roots.len() != 1 {
            push("links".into(), format!("expected exactly one root link (the palm), found {}", roots.len()));
        }
        let mut parents: Vec<Option<usize>> = vec![None; doc.links.len()];
        for (i, l) in doc.links.iter().enumerate() {
            if let Some(p) = &l.parent {
                match link_index.get(p.as_str()) {
                    Some(&pi) => parents[i] = Some(pi),
                    None => push(format!("links[{i}].parent"), format!("unknown parent link `{p}`")),
                }
            }
        }
        // Cycle detection: walking up from any link must reach a root within n steps.
        for i in 0..doc.links.len() {
            let mut cur = i;
            let mut steps = 0;
            while let Some(p) = parents[cur] {
                cur = p;
                steps += 1;
                if steps > doc.links.len() {
                    push(format!("links[{i}].parent"), format!("cycle through link `{}`", doc.links[i].name));
                    break;
                }
            }
        }

        let mut joint_of_link: Vec<Option<usize>> = vec![None; doc.links.len()];
        for (j, jd) in doc.joints.iter().enumerate() {
            match link_index.get(jd.child_link.as_str()) {
                Some(&li) => {
                    if parents[li].is_none() {
                        push(format!("joints[{j}].child_link"), format!("joint `{}` drives the root link", jd.name));
                    }
                    if joint_of_link[li].replace(j).is_some() {
                        push(format!("joints[{j}].child_link"), format!("link `{}` already has a joint", jd.child_link));
                    }
                }
                None => push(format!("joints[{j}].child_link"), format!("joint `{}` references unknown link `{}`", jd.name, jd.child_link)),
            }
            let [lo, hi] = jd.limits;
            if !(lo < hi) {
                push(format!("joints[{j}].limits"), format!("joint `{}` has lower limit {lo} >= upper limit {hi}", jd.name));
            }
            let an = jd.axis.iter().map(|c| c * c).sum::<f64>().sqrt();
            if !(an > 1e-9) || !an.is_finite() {
                push(format!("joints[{j}].axis"), format!("joint `{}` axis is degenerate", jd.name));
            }
            if !(jd.max_torque > 0.0) {
                push(format!("joints[{j}].max_torque"), format!("joint `{}` max_torque must be positive", jd.name));
            }
        }

        let mut kp_names = HashMap::new();
        for (k, kd) in doc.keypoints.iter().enumerate() {
            if kp_names.insert(kd.name.as_str(), k).is_some() {
                push(format!("keypoints[{k}].name"), format!("duplicate keypoint `{}`", kd.name));
            }
            if !link_index.contains_key(kd.link.as_str()) {
                push(format!("keypoints[{k}].link"), format!("keypoint `{}` references unknown link `{}`", kd.name, kd.link));
            }
        }
        let palm_count = doc.keypoints.iter().filter(|k| k.name == PALM_KEYPOINT).count();
        if palm_count != 1 {
            push("keypoints".into(), format!("expected exactly one `{PALM_KEYPOINT}` keypoint, found {palm_count}"));
        }

        if !errs.is_empty() {
            return Err(ModelError::Schema(errs));
        }

        // Parents-first ordering.
        let n = doc.links.len();
        let depth = |mut i: usize| {
            let mut d = 0;
            while let Some(p) = parents[i] {
                i = p;
                d += 1;
            }
            d
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (depth(i), i));
        let mut new_index = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }

        let links: Vec<Link> = order
            .iter()
            .map(|&old| {
                let l = &doc.links[old];
                Link {
                    name: l.name.clone(),
                    parent: parents[old].map(|p| new_index[p]),
                    origin: SE3Pose::new(
                        Vec3::from(l.xyz),
                        Rotation::from_wxyz_normalized(l.quat[0], l.quat[1], l.quat[2], l.quat[3]),
                    ),
                    joint: joint_of_link[old],
                }
            })
            .collect();
        let joints: Vec<Joint> = doc
            .joints
            .iter()
            .map(|jd| Joint {
                name: jd.name.clone(),
                link: new_index[link_index[jd.child_link.as_str()]],
                axis: Vec3::from(jd.axis).normalize(),
                lower: jd.limits[0],
                upper: jd.limits[1],
                max_torque: jd.max_torque,
            })
            .collect();
        let keypoints: Vec<Keypoint> = doc
            .keypoints
            .iter()
            .map(|kd| Keypoint {
                name: kd.name.clone(),
                link: new_index[link_index[kd.link.as_str()]],
                offset: Vec3::from(kd.offset),
            })
            .collect();
        let keypoint_chains = keypoints
            .iter()
            .map(|kp| {
                let mut chain = Vec::new();
                let mut cur = Some(kp.link);
                while let Some(l) = cur {
                    if let Some(j) = links[l].joint {
                        chain.push(j);
                    }
                    cur = links[l].parent;
                }
                chain.reverse();
                chain
            })
            .collect();
        let palm_keypoint = keypoints.iter().position(|k| k.name == PALM_KEYPOINT).unwrap();
        Ok(HandModel {
            links,
            joints,
            keypoints,
            palm_keypoint,
            keypoint_chains,
            doc,
        })
    }

    pub fn dof_count(&self) -> usize {
        self.joints.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn keypoint_index(&self, name: &str) -> Option<usize> {
        self.keypoints.iter().position(|k| k.name == name)
    }

    pub fn palm_keypoint_index(&self) -> usize {
        self.palm_keypoint
    }

    /// Indices of keypoints whose name ends in `tip`, in declaration order.
    pub fn fingertip_indices(&self) -> Vec<usize> {
        (0..self.keypoints.len()).filter(|&i| self.keypoints[i].name.ends_with("tip")).collect()
    }

    /// Joints between the palm and a keypoint, root first.
    pub fn keypoint_chain(&self, keypoint: usize) -> &[usize] {
        &self.keypoint_chains[keypoint]
    }

    pub fn doc(&self) -> &HandModelDoc {
        &self.doc
    }

    /// SHA-256 over the canonical JSON form of the description.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(&self.doc).expect("model doc serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn lower_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.lower).collect()
    }

    pub fn upper_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.upper).collect()
    }

    fn check_dof(&self, joints: &JointConfig) -> Result<(), ModelError> {
        if joints.len() != self.dof_count() {
            return Err(ModelError::DofMismatch {
                expected: self.dof_count(),
                got: joints.len(),
            });
        }
        Ok(())
    }

    /// World pose of every link (parents-first order).
    pub fn link_poses(&self, state: &HandState) -> Result<Vec<SE3Pose>, ModelError> {
        self.check_dof(&state.joints)?;
        let mut poses: Vec<SE3Pose> = Vec::with_capacity(self.links.len());
        for link in &self.links {
            let base = match link.parent {
                Some(p) => poses[p].compose(&link.origin),
                None => state.palm_pose.compose(&link.origin),
            };
            let pose = match link.joint {
                Some(j) => base.compose(&SE3Pose::from_rotation(Rotation::from_axis_angle(
                    &self.joints[j].axis,
                    state.joints.angles[j],
                ))),
                None => base,
            };
            poses.push(pose);
        }
        Ok(poses)
    }

    /// World positions of all keypoints, in model keypoint order.
    pub fn keypoint_positions(&self, state: &HandState) -> Result<Vec<Vec3>, ModelError> {
        let poses = self.link_poses(state)?;
        Ok(self.keypoints_from_link_poses(&poses))
    }

    pub fn keypoints_from_link_poses(&self, poses: &[SE3Pose]) -> Vec<Vec3> {
        self.keypoints
            .iter()
            .map(|k| poses[k.link].transform_point(&k.offset))
            .collect()
    }

    /// World-frame origin and axis of each joint, given link poses.
    pub fn joint_frames(&self, poses: &[SE3Pose]) -> Vec<(Vec3, Vec3)> {
        self.joints
            .iter()
            .map(|j| {
                let p = &poses[j.link];
                (p.translation, p.rotation.rotate(&j.axis))
            })
            .collect()
    }

    /// Per-joint clamp into `[lower, upper]`.
    pub fn clamp_to_limits(&self, config: &JointConfig) -> JointConfig {
        JointConfig::new(
            config
                .angles
                .iter()
                .zip(&self.joints)
                .map(|(a, j)| a.clamp(j.lower, j.upper))
                .collect(),
        )
    }

    pub fn within_limits(&self, config: &JointConfig) -> bool {
        config.len() == self.dof_count()
            && config
                .angles
                .iter()
                .zip(&self.joints)
                .all(|(a, j)| *a >= j.lower && *a <= j.upper)
    }
}

/// Keypoint name → world position.
pub fn forward_kinematics(model: &HandModel, state: &HandState) -> Result<BTreeMap<String, Vec3>, ModelError> {
    let pos = model.keypoint_positions(state)?;
    Ok(model
        .keypoints()
        .iter()
        .zip(pos)
        .map(|(k, p)| (k.name.clone(), p))
        .collect())
}

pub fn clamp_to_limits(model: &HandModel, config: &JointConfig) -> JointConfig {
    model.clamp_to_limits(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(model: &HandModel, rng: &mut impl Rng) -> HandState {
        let angles = model
            .joints()
            .iter()
            .map(|j| rng.random_range(j.lower..j.upper))
            .collect();
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        HandState::new(
            SE3Pose::new(
                Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)),
                Rotation::from_axis_angle(&axis, rng.random_range(-3.0..3.0)),
            ),
            JointConfig::new(angles),
        )
    }

    /// Independent oracle: homogeneous 4×4 matrices with Rodrigues rotations,
    /// walking each keypoint's chain from the palm outward.
    fn matrix_chain_oracle(model: &HandModel, state: &HandState, kp: usize) -> Vec3 {
        fn hom(r: nalgebra::Matrix3<f64>, t: Vec3) -> Matrix4<f64> {
            let mut m = Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
            m
        }
        fn rodrigues(axis: &Vec3, angle: f64) -> nalgebra::Matrix3<f64> {
            let k = axis.normalize();
            let kx = nalgebra::Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
            nalgebra::Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
        }
        let doc = model.doc();
        let kd = &doc.keypoints[kp];
        let mut chain = Vec::new();
        let mut cur = Some(kd.link.clone());
        while let Some(name) = cur {
            let l = doc.links.iter().find(|l| l.name == name).unwrap();
            chain.push(l.clone());
            cur = l.parent.clone();
        }
        chain.reverse();
        let mut m = hom(state.palm_pose.rotation.matrix(), state.palm_pose.translation);
        for l in &chain {
            let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(l.quat[0], l.quat[1], l.quat[2], l.quat[3]));
            m *= hom(q.to_rotation_matrix().into_inner(), Vec3::from(l.xyz));
            if let Some((ji, jd)) = doc.joints.iter().enumerate().find(|(_, j)| j.child_link == l.name) {
                m *= hom(rodrigues(&Vec3::from(jd.axis), state.joints.angles[ji]), Vec3::zeros());
            }
        }
        let p = m * nalgebra::Vector4::new(kd.offset[0], kd.offset[1], kd.offset[2], 1.0);
        Vec3::new(p.x, p.y, p.z)
    }

    #[test]
    fn bundled_models_load() {
        let hand = HandModel::four_finger();
        assert_eq!(hand.dof_count(), 16);
        assert_eq!(hand.fingertip_indices().len(), 4);
        assert_eq!(hand.keypoints()[hand.palm_keypoint_index()].name, PALM_KEYPOINT);
        let pincher = HandModel::pincher();
        assert_eq!(pincher.dof_count(), 2);
    }

    #[test]
    fn pincher_matches_hand_computed_chain() {
        // Left jaw hinges about +x at (0, 0.05, 0) with a 0.1 m finger along +z:
        // tip = (0, 0.05 - 0.1 sin q, 0.1 cos q). Right jaw mirrors it.
        let m = HandModel::pincher();
        for &q in &[0.0, 0.3, -0.2, 0.7] {
            let s = HandState::new(SE3Pose::identity(), JointConfig::new(vec![q, q]));
            let kp = forward_kinematics(&m, &s).unwrap();
            let l = kp["left_tip"];
            let r = kp["right_tip"];
            assert!((l - Vec3::new(0.0, 0.05 - 0.1 * q.sin(), 0.1 * q.cos())).norm() < 1e-12);
            assert!((r - Vec3::new(0.0, -0.05 + 0.1 * q.sin(), 0.1 * q.cos())).norm() < 1e-12);
        }
    }

    #[test]
    fn reversed_limits_name_the_joint() {
        let mut doc = HandModel::pincher().doc().clone();
        doc.joints[1].limits = [1.0, -1.0];
        let err = HandModel::from_doc(doc).unwrap_err();
        let ModelError::Schema(v) = err else { panic!("expected schema error") };
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "joints[1].limits");
        assert!(v[0].message.contains("right_jaw"));
    }

    #[test]
    fn schema_errors_are_collected() {
        let mut doc = HandModel::pincher().doc().clone();
        doc.keypoints.retain(|k| k.name != PALM_KEYPOINT);
        doc.links[1].parent = Some(doc.links[2].name.clone());
        doc.links[2].parent = Some(doc.links[1].name.clone());
        let ModelError::Schema(v) = HandModel::from_doc(doc).unwrap_err() else { panic!() };
        assert!(v.iter().any(|e| e.message.contains("cycle")));
        assert!(v.iter().any(|e| e.message.contains("`palm` keypoint")));
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = r#"{"links":[{"name":"palm","parent":null,"xyz":[0,0,0],"quat":[1,0,0,0],"mass":1}],"joints":[],"keypoints":[{"name":"palm","link":"palm","offset":[0,0,0]}]}"#;
        assert!(matches!(load_hand_model(bad), Err(ModelError::Parse(_))));
    }

    #[test]
    fn zero_config_accumulates_fixed_transforms() {
        let m = HandModel::four_finger();
        let s = HandState::new(SE3Pose::identity(), JointConfig::zeros(16));
        let pos = m.keypoint_positions(&s).unwrap();
        for (k, p) in m.keypoints().iter().zip(&pos) {
            let mut pose = SE3Pose::identity();
            let mut chain = vec![];
            let mut cur = Some(k.link);
            while let Some(l) = cur {
                chain.push(m.links()[l].origin);
                cur = m.links()[l].parent;
            }
            chain.reverse();
            for o in &chain {
                pose = pose.compose(o);
            }
            assert!((pose.transform_point(&k.offset) - p).norm() < 1e-12);
        }
        assert_eq!(pos[m.palm_keypoint_index()], Vec3::zeros());
    }

    #[test]
    fn fk_matches_matrix_chain_oracle() {
        let m = HandModel::four_finger();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let s = random_state(&m, &mut rng);
            let pos = m.keypoint_positions(&s).unwrap();
            for (i, p) in pos.iter().enumerate() {
                assert!((matrix_chain_oracle(&m, &s, i) - p).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn fk_is_equivariant_in_palm_pose() {
        let m = HandModel::four_finger();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let s = random_state(&m, &mut rng);
            let g = random_state(&m, &mut rng).palm_pose;
            let moved = HandState::new(g.compose(&s.palm_pose), s.joints.clone());
            let a = m.keypoint_positions(&s).unwrap();
            let b = m.keypoint_positions(&moved).unwrap();
            for (pa, pb) in a.iter().zip(&b) {
                assert!((g.transform_point(pa) - pb).norm() < 1e-9);
            }
            let d = Vec3::new(0.1, -0.3, 0.2);
            let shifted = HandState::new(SE3Pose::from_translation(d).compose(&s.palm_pose), s.joints.clone());
            let c = m.keypoint_positions(&shifted).unwrap();
            for (pa, pc) in a.iter().zip(&c) {
                assert!((pa + d - pc).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn dof_mismatch_is_an_error() {
        let m = HandModel::four_finger();
        let s = HandState::new(SE3Pose::identity(), JointConfig::zeros(3));
        assert!(matches!(
            forward_kinematics(&m, &s),
            Err(ModelError::DofMismatch { expected: 16, got: 3 })
        ));
    }

    #[test]
    fn clamp_behaviour() {
        let m = HandModel::four_finger();
        let inside = JointConfig::zeros(16);
        assert_eq!(m.clamp_to_limits(&inside), inside);
        let mut high = inside.clone();
        high.angles[5] = 10.0;
        assert_eq!(m.clamp_to_limits(&high).angles[5], m.joints()[5].upper);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let c = JointConfig::new((0..16).map(|_| rng.random_range(-4.0..4.0)).collect());
            let once = m.clamp_to_limits(&c);
            assert!(m.within_limits(&once));
            assert_eq!(m.clamp_to_limits(&once), once);
        }
    }
}
