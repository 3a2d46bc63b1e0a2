//! Invariants over arbitrary inputs.

use dexgrasp::dataset::to_canonical_json;
use dexgrasp::kinematics::forward_kinematics;
use dexgrasp::{geodesic_distance, relative_pose, HandModel, HandState, JointConfig, Rotation, SE3Pose, Vec3};
use proptest::prelude::*;
use std::f64::consts::PI;

fn rotation() -> impl Strategy<Value = Rotation> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
        .prop_map(|(w, x, y, z)| Rotation::from_wxyz_normalized(w, x, y, z))
}

fn pose() -> impl Strategy<Value = SE3Pose> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, rotation()).prop_map(|(x, y, z, r)| SE3Pose::new(Vec3::new(x, y, z), r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn geodesic_is_a_bounded_metric(a in rotation(), b in rotation(), c in rotation()) {
        let ab = geodesic_distance(&a, &b);
        prop_assert!((0.0..=PI + 1e-12).contains(&ab));
        prop_assert!((ab - geodesic_distance(&b, &a)).abs() < 1e-12);
        prop_assert!(geodesic_distance(&a, &a) < 1e-7);
        prop_assert!(geodesic_distance(&a, &c) <= ab + geodesic_distance(&b, &c) + 1e-9);
    }

    #[test]
    fn geodesic_is_invariant_under_common_rotation(a in rotation(), b in rotation(), g in rotation()) {
        let d = geodesic_distance(&a, &b);
        prop_assert!((geodesic_distance(&g.compose(&a), &g.compose(&b)) - d).abs() < 1e-9);
        prop_assert!((geodesic_distance(&a.compose(&g), &b.compose(&g)) - d).abs() < 1e-9);
    }

    #[test]
    fn pose_inverse_and_relative_pose(a in pose(), f in pose(), p in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)) {
        let p = Vec3::new(p.0, p.1, p.2);
        let back = a.inverse().transform_point(&a.transform_point(&p));
        prop_assert!((back - p).norm() < 1e-12);
        let rel = relative_pose(&a, &f);
        prop_assert!(f.compose(&rel).distance_to(&a) < 1e-9);
    }

    #[test]
    fn keypoints_move_rigidly_with_the_palm(g in pose(), seed in any::<u64>()) {
        let model = HandModel::four_finger();
        let n = model.dof_count();
        let angles = (0..n).map(|i| ((seed >> (i % 64)) & 7) as f64 * 0.2 - 0.6).collect();
        let joints = model.clamp_to_limits(&JointConfig::new(angles));
        let state = HandState::new(SE3Pose::identity(), joints.clone());
        let moved = HandState::new(g, joints);
        let a = forward_kinematics(&model, &state).unwrap();
        let b = forward_kinematics(&model, &moved).unwrap();
        for (name, p) in &a {
            prop_assert!((g.transform_point(p) - b[name]).norm() < 1e-12, "{}", name);
        }
    }

    #[test]
    fn joint_clamping_is_idempotent(angles in proptest::collection::vec(-4.0..4.0f64, 16)) {
        let model = HandModel::four_finger();
        let once = model.clamp_to_limits(&JointConfig::new(angles));
        prop_assert_eq!(model.clamp_to_limits(&once), once);
    }

    #[test]
    fn canonical_floats_round_trip_exactly(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        let bytes = to_canonical_json(&x).unwrap();
        let back: f64 = serde_json::from_slice(&bytes).unwrap();
        prop_assert_eq!(back.to_bits(), x.to_bits());
    }
}
