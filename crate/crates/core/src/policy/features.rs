//! Palm-relative observation features with a short history.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::kinematics::HandModel;
use crate::retarget::ObservedFrame;
use crate::sim::ObjectSpec;

use super::PolicyError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Frames per window; shorter windows repeat their oldest frame.
    pub history: usize,
    /// Object surface samples fed to the point-pooling layer (0 disables).
    pub surface_points: usize,
    pub contact_flags: bool,
    /// Also encode the object's displacement since the first observation.
    pub object_shift: bool,
    /// Seed of the surface sampler; a fixed seed makes the sample a function
    /// of the object pose.
    pub point_seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            history: 5,
            surface_points: 32,
            contact_flags: true,
            object_shift: true,
            point_seed: 0,
        }
    }
}

impl FeatureConfig {
    /// Length of the flat part: per frame joints, keypoints, object center,
    /// optional object shift and optional contact flags.
    pub fn flat_len(&self, model: &HandModel) -> usize {
        let contacts = if self.contact_flags { model.fingertip_indices().len() } else { 0 };
        let shift = if self.object_shift { 3 } else { 0 };
        self.history * (model.dof_count() + 3 * model.keypoints().len() + 3 + shift + contacts)
    }
}

/// Everything expressed in the palm frame of the newest window entry.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub flat: Vec<f64>,
    pub points: Vec<Vec3>,
}

/// Features of the observations of an attempt so far (oldest first). The
/// newest `cfg.history` frames are encoded, padded at the front with copies
/// of the oldest; the first frame is the reference for the object shift.
pub fn featurize(model: &HandModel, cfg: &FeatureConfig, window: &[ObservedFrame], object: &ObjectSpec) -> Result<FeatureVector, PolicyError> {
    let newest = window.last().ok_or_else(|| PolicyError::InvalidInput("empty feature window".into()))?;
    let origin = window[0].object_pose.translation;
    let dof = model.dof_count();
    let tips = model.fingertip_indices().len();
    let palm = newest.hand.palm_pose;
    let start = window.len().saturating_sub(cfg.history);
    let recent = &window[start..];
    let pad = cfg.history - recent.len();

    let mut flat = Vec::with_capacity(cfg.flat_len(model));
    for k in 0..cfg.history {
        let f = &recent[k.saturating_sub(pad)];
        if f.hand.joints.len() != dof {
            return Err(PolicyError::InvalidInput(format!("frame has {} joints, model has {dof}", f.hand.joints.len())));
        }
        flat.extend(&f.hand.joints.angles);
        let kps = model.keypoint_positions(&f.hand).map_err(|e| PolicyError::InvalidInput(e.to_string()))?;
        for p in kps {
            flat.extend(palm.inverse_transform_point(&p).iter());
        }
        flat.extend(palm.inverse_transform_point(&f.object_pose.translation).iter());
        if cfg.object_shift {
            flat.extend(palm.rotation.inverse().rotate(&(f.object_pose.translation - origin)).iter());
        }
        if cfg.contact_flags {
            if f.contacts.len() != tips {
                return Err(PolicyError::InvalidInput(format!("frame has {} contact flags, model has {tips} tips", f.contacts.len())));
            }
            flat.extend(f.contacts.iter().map(|&c| if c { 1.0 } else { 0.0 }));
        }
    }
    let points = if cfg.surface_points > 0 {
        object
            .sample_surface_points(&newest.object_pose, cfg.surface_points, cfg.point_seed)
            .iter()
            .map(|p| palm.inverse_transform_point(p))
            .collect()
    } else {
        Vec::new()
    };
    Ok(FeatureVector { flat, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{box_object, golden_grasp};
    use crate::geometry::{Rotation, SE3Pose};
    use crate::kinematics::{HandState, JointConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frames(model: &HandModel) -> Vec<ObservedFrame> {
        let (_, pose, states) = golden_grasp(model);
        states
            .iter()
            .enumerate()
            .map(|(i, s)| ObservedFrame {
                hand: s.clone(),
                object_pose: SE3Pose::new(pose.translation + Vec3::new(0.0, 0.0, 0.002 * i as f64), pose.rotation),
                contacts: vec![i % 2 == 0, false, i % 3 == 0, true],
            })
            .collect()
    }

    fn moved(f: &ObservedFrame, g: &SE3Pose) -> ObservedFrame {
        ObservedFrame {
            hand: HandState::new(g.compose(&f.hand.palm_pose), f.hand.joints.clone()),
            object_pose: g.compose(&f.object_pose),
            contacts: f.contacts.clone(),
        }
    }

    #[test]
    fn global_transform_leaves_features_unchanged() {
        let model = HandModel::four_finger();
        let cfg = FeatureConfig::default();
        let obj = box_object();
        let fs = frames(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let q = [0; 4].map(|_| rng.random_range(-1.0..1.0));
            let g = SE3Pose::new(
                Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
                Rotation::from_wxyz_normalized(q[0], q[1], q[2], q[3]),
            );
            let end = rng.random_range(1..fs.len());
            let window = &fs[end.saturating_sub(5)..end];
            let a = featurize(&model, &cfg, window, &obj).unwrap();
            let gw: Vec<ObservedFrame> = window.iter().map(|f| moved(f, &g)).collect();
            let b = featurize(&model, &cfg, &gw, &obj).unwrap();
            for (x, y) in a.flat.iter().zip(&b.flat) {
                worst = worst.max((x - y).abs());
            }
            for (x, y) in a.points.iter().zip(&b.points) {
                worst = worst.max((x - y).norm());
            }
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn single_frame_fills_every_slot() {
        let model = HandModel::four_finger();
        let cfg = FeatureConfig::default();
        let fs = frames(&model);
        let v = featurize(&model, &cfg, &fs[3..4], &box_object()).unwrap();
        assert_eq!(v.flat.len(), cfg.flat_len(&model));
        let per = v.flat.len() / cfg.history;
        for k in 1..cfg.history {
            assert_eq!(v.flat[..per], v.flat[k * per..(k + 1) * per]);
        }
        assert_eq!(v.points.len(), 32);
    }

    #[test]
    fn object_block_matches_a_hand_transform() {
        let model = HandModel::four_finger();
        let cfg = FeatureConfig {
            history: 1,
            surface_points: 0,
            contact_flags: false,
            object_shift: false,
            ..FeatureConfig::default()
        };
        let f = ObservedFrame {
            hand: HandState::new(SE3Pose::identity(), JointConfig::zeros(model.dof_count())),
            object_pose: SE3Pose::from_translation(Vec3::new(0.3, 0.0, 0.05)),
            contacts: Vec::new(),
        };
        let v = featurize(&model, &cfg, &[f.clone()], &box_object()).unwrap();
        let n = v.flat.len();
        assert_eq!(&v.flat[n - 3..], &[0.3, 0.0, 0.05]);
        // Palm turned a quarter about z and raised: (0.3, 0, 0.05) ↦ (0, -0.3, -0.15).
        let mut g = f;
        g.hand.palm_pose = SE3Pose::new(Vec3::new(0.0, 0.0, 0.2), Rotation::from_axis_angle(&Vec3::z(), std::f64::consts::FRAC_PI_2));
        let v = featurize(&model, &cfg, &[g], &box_object()).unwrap();
        let c = &v.flat[n - 3..];
        assert!((c[0] - 0.0).abs() < 1e-12 && (c[1] + 0.3).abs() < 1e-12 && (c[2] + 0.15).abs() < 1e-12, "{c:?}");
    }

    #[test]
    fn object_shift_is_measured_from_the_first_frame_in_palm_axes() {
        let model = HandModel::four_finger();
        let cfg = FeatureConfig {
            history: 1,
            surface_points: 0,
            contact_flags: false,
            ..FeatureConfig::default()
        };
        let palm = SE3Pose::new(Vec3::new(0.1, 0.2, 0.3), Rotation::from_axis_angle(&Vec3::x(), std::f64::consts::PI));
        let frame = |z: f64| ObservedFrame {
            hand: HandState::new(palm, JointConfig::zeros(model.dof_count())),
            object_pose: SE3Pose::from_translation(Vec3::new(0.3, 0.0, z)),
            contacts: Vec::new(),
        };
        let v = featurize(&model, &cfg, &[frame(0.05), frame(0.10), frame(0.15)], &box_object()).unwrap();
        let n = v.flat.len();
        // Palm facing down: a 0.1 m rise is -0.1 along the palm z axis.
        let c = &v.flat[n - 3..];
        assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12 && (c[2] + 0.1).abs() < 1e-12, "{c:?}");
        let v = featurize(&model, &cfg, &[frame(0.15)], &box_object()).unwrap();
        assert_eq!(&v.flat[n - 3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn errors_on_empty_window_and_dof_mismatch() {
        let model = HandModel::four_finger();
        let cfg = FeatureConfig::default();
        assert!(featurize(&model, &cfg, &[], &box_object()).is_err());
        let mut f = frames(&model).remove(0);
        f.hand.joints.angles.pop();
        assert!(featurize(&model, &cfg, &[f], &box_object()).is_err());
    }
}
