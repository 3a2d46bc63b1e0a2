//! Three-term action loss and its gradient.

use nalgebra::{Matrix3, Matrix4x3, Vector4};
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

use super::PolicyOutput;

/// Per-term weights; all ones gives the plain sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub translation: f64,
    pub rotation: f64,
    pub fingers: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            translation: 1.0,
            rotation: 1.0,
            fingers: 1.0,
        }
    }
}

/// Unit quaternion `(w, x, y, z)` of an axis-angle vector and its Jacobian.
pub(crate) fn exp_with_jacobian(r: &Vec3) -> (Vector4<f64>, Matrix4x3<f64>) {
    let th = r.norm();
    let half = 0.5 * th;
    // s = sin(θ/2)/θ and c = (θ/2·cos(θ/2) − sin(θ/2))/θ³, series near 0.
    let (s, c) = if th < 1e-4 {
        (0.5 - th * th / 48.0, -1.0 / 24.0 + th * th / 960.0)
    } else {
        (half.sin() / th, (half * half.cos() - half.sin()) / (th * th * th))
    };
    let q = Vector4::new(half.cos(), s * r.x, s * r.y, s * r.z);
    let mut j = Matrix4x3::zeros();
    j.fixed_view_mut::<1, 3>(0, 0).copy_from(&(-0.5 * s * r.transpose()));
    j.fixed_view_mut::<3, 3>(1, 0).copy_from(&(Matrix3::identity() * s + r * r.transpose() * c));
    (q, j)
}

fn geodesic_and_gradient(r: &Vec3, target: &Vec3) -> (f64, Vec3) {
    let (q, j) = exp_with_jacobian(r);
    let (qt, _) = exp_with_jacobian(target);
    let d = q.dot(&qt);
    let a = d.abs().min(1.0);
    // Chord form; exact zero for equal rotations where acos loses digits.
    let s = if d < 0.0 { -1.0 } else { 1.0 };
    let value = 4.0 * (q - qt * s).norm().atan2((q + qt * s).norm());
    let gap = (1.0 - a * a).max(0.0).sqrt();
    if gap < 1e-12 {
        return (value, Vec3::zeros());
    }
    let dg_dq = qt * (-2.0 * s / gap);
    (value, j.transpose() * dg_dq)
}

fn norm_and_gradient(e: &[f64]) -> (f64, Vec<f64>) {
    let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
    let g = if n < 1e-12 { vec![0.0; e.len()] } else { e.iter().map(|x| x / n).collect() };
    (n, g)
}

/// Loss of a packed prediction `[Δt, Δr, q]` against a packed target, with
/// the gradient with respect to the prediction.
pub fn packed_loss_and_gradient(pred: &[f64], target: &[f64], w: &LossWeights) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len(), "packed lengths differ");
    let mut grad = vec![0.0; pred.len()];
    let et: Vec<f64> = (0..3).map(|k| pred[k] - target[k]).collect();
    let (lt, gt) = norm_and_gradient(&et);
    let r = Vec3::new(pred[3], pred[4], pred[5]);
    let rt = Vec3::new(target[3], target[4], target[5]);
    let (lr, gr) = geodesic_and_gradient(&r, &rt);
    let ef: Vec<f64> = (6..pred.len()).map(|k| pred[k] - target[k]).collect();
    let (lf, gf) = norm_and_gradient(&ef);
    for k in 0..3 {
        grad[k] = w.translation * gt[k];
        grad[3 + k] = w.rotation * gr[k];
    }
    for (k, g) in gf.iter().enumerate() {
        grad[6 + k] = w.fingers * g;
    }
    (w.translation * lt + w.rotation * lr + w.fingers * lf, grad)
}

/// `‖Δt − Δt*‖ + G(exp Δr, exp Δr*) + ‖q − q*‖` with unit weights.
pub fn loss(pred: &PolicyOutput, target: &PolicyOutput) -> f64 {
    weighted_loss(pred, target, &LossWeights::default())
}

pub fn weighted_loss(pred: &PolicyOutput, target: &PolicyOutput, w: &LossWeights) -> f64 {
    packed_loss_and_gradient(&pred.pack(), &target.pack(), w).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geodesic_distance, Rotation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn out(t: [f64; 3], r: [f64; 3], q: Vec<f64>) -> PolicyOutput {
        PolicyOutput {
            delta_translation: Vec3::from(t),
            delta_rotation: Vec3::from(r),
            fingers: q,
        }
    }

    #[test]
    fn equal_actions_cost_nothing() {
        let a = out([0.01, -0.02, 0.3], [0.2, 0.1, -0.4], vec![0.1, 0.5]);
        assert_eq!(loss(&a, &a), 0.0);
    }

    #[test]
    fn translation_only_error() {
        let a = out([0.0; 3], [0.0; 3], vec![0.0; 4]);
        let b = out([0.1, 0.0, 0.0], [0.0; 3], vec![0.0; 4]);
        assert!((loss(&b, &a) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn half_turn_rotation_error() {
        let a = out([0.0; 3], [0.0; 3], vec![0.0; 4]);
        let b = out([0.0; 3], [0.0, 0.0, PI], vec![0.0; 4]);
        assert!((loss(&b, &a) - PI).abs() < 1e-7);
    }

    #[test]
    fn rotation_term_compares_rotation_classes() {
        // A full turn is the identity rotation.
        let a = out([0.0; 3], [0.0; 3], vec![]);
        let b = out([0.0; 3], [0.0, 2.0 * PI, 0.0], vec![]);
        assert!(loss(&b, &a) < 1e-7);
    }

    #[test]
    fn rotation_term_matches_the_geodesic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let r = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let t = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let (g, _) = geodesic_and_gradient(&r, &t);
            let oracle = geodesic_distance(&Rotation::from_rotation_vector(&r), &Rotation::from_rotation_vector(&t));
            assert!((g - oracle).abs() < 1e-7, "{g} {oracle}");
        }
    }

    #[test]
    fn exp_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for scale in [1e-6, 1e-3, 1.0, 3.0] {
            let r = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale;
            let (_, j) = exp_with_jacobian(&r);
            for k in 0..3 {
                let h = 1e-6;
                let mut rp = r;
                rp[k] += h;
                let mut rm = r;
                rm[k] -= h;
                let fd = (exp_with_jacobian(&rp).0 - exp_with_jacobian(&rm).0) / (2.0 * h);
                assert!((fd - j.column(k)).norm() < 1e-8, "{scale} {k}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences_per_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = LossWeights {
            translation: 1.3,
            rotation: 0.7,
            fingers: 2.0,
        };
        for _ in 0..64 {
            let pred: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let target: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = packed_loss_and_gradient(&pred, &target, &w);
            for k in 0..10 {
                let h = 1e-6;
                let mut p = pred.clone();
                p[k] += h;
                let up = packed_loss_and_gradient(&p, &target, &w).0;
                p[k] -= 2.0 * h;
                let dn = packed_loss_and_gradient(&p, &target, &w).0;
                let fd = (up - dn) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "{k}: {fd} vs {}", g[k]);
            }
        }
    }
}
