//! Rigid-transform primitives.
//!
//! Rotations are stored as unit quaternions; matrices are only produced as
//! derived views. A [`Rotation`] is a rotation class, so `q` and `-q` compare
//! equal and have zero geodesic distance.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Maximum accepted deviation of a raw quaternion's norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Composition chains are renormalized after this many products.
pub const RENORMALIZE_EVERY: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("quaternion norm {norm} deviates from 1 by more than {UNIT_NORM_TOLERANCE}")]
    NonUnitQuaternion { norm: f64 },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("pose array must have 7 entries, got {0}")]
    PoseArrayLength(usize),
}

/// A rotation in SO(3), stored as a unit quaternion.
#[derive(Clone, Copy, Debug)]
pub struct Rotation(UnitQuaternion<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl PartialEq for Rotation {
    /// Rotation-class equality: `q` and `-q` are the same rotation.
    fn eq(&self, other: &Self) -> bool {
        let a = self.0.quaternion();
        let b = other.0.quaternion();
        a.coords == b.coords || a.coords == -b.coords
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    /// Builds a rotation from `(w, x, y, z)`, rejecting quaternions whose norm
    /// is further than [`UNIT_NORM_TOLERANCE`] from 1. Quaternions already unit
    /// to 1e-12 are kept bit-for-bit; others are renormalized.
    pub fn try_from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let q = Quaternion::new(w, x, y, z);
        if !q.coords.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite { what: "quaternion" });
        }
        let norm = q.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(GeometryError::NonUnitQuaternion { norm });
        }
        if (norm - 1.0).abs() <= 1e-12 {
            return Ok(Self(UnitQuaternion::new_unchecked(q)));
        }
        Ok(Self(UnitQuaternion::new_normalize(q)))
    }

    /// Normalizing constructor for internally generated quaternions.
    pub fn from_wxyz_normalized(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self(UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z)))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self(q)
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::from_rotation_vector(&(axis * (angle / n)))
    }

    /// Exponential map from an axis-angle vector.
    pub fn from_rotation_vector(v: &Vec3) -> Self {
        let [w, x, y, z] = exp_map_wxyz(v);
        Self(UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)))
    }

    /// Logarithm: axis-angle vector with angle in `[0, π]`.
    pub fn to_rotation_vector(&self) -> Vec3 {
        let q = self.0.quaternion();
        let (mut w, mut v) = (q.w, q.vector().into_owned());
        if w < 0.0 {
            w = -w;
            v = -v;
        }
        let s = v.norm();
        if s < 1e-12 {
            return v * 2.0;
        }
        let angle = 2.0 * s.atan2(w);
        v * (angle / s)
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0.transform_vector(v)
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(UnitQuaternion::new_unchecked(
            self.0.quaternion() * other.0.quaternion(),
        ))
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.inverse())
    }

    pub fn renormalized(&self) -> Rotation {
        Rotation(UnitQuaternion::new_normalize(*self.0.quaternion()))
    }

    /// Shortest-arc spherical interpolation.
    pub fn slerp(&self, other: &Rotation, t: f64) -> Rotation {
        let rel = self.inverse().compose(other).to_rotation_vector();
        self.compose(&Rotation::from_rotation_vector(&(rel * t)))
    }

    pub fn angle_to(&self, other: &Rotation) -> f64 {
        geodesic_distance(self, other)
    }
}

/// Quaternion `(w, x, y, z)` of the exponential map of an axis-angle vector.
pub fn exp_map_wxyz(v: &Vec3) -> [f64; 4] {
    let theta = v.norm();
    let half = 0.5 * theta;
    // sin(θ/2)/θ, Taylor-expanded near zero.
    let k = if theta < 1e-6 {
        0.5 - theta * theta / 48.0
    } else {
        half.sin() / theta
    };
    [half.cos(), k * v.x, k * v.y, k * v.z]
}

/// Vector part of `conj(a) ⊗ b`, written so that `b = ±a` yields exact zeros.
fn relative_vector(a: &Quaternion<f64>, b: &Quaternion<f64>) -> (f64, Vec3) {
    let (aw, av) = (a.w, Vec3::new(a.i, a.j, a.k));
    let (bw, bv) = (b.w, Vec3::new(b.i, b.j, b.k));
    let w = aw * bw + av.dot(&bv);
    let v = Vec3::new(
        aw * bv.x - bw * av.x - (av.y * bv.z - av.z * bv.y),
        aw * bv.y - bw * av.y - (av.z * bv.x - av.x * bv.z),
        aw * bv.z - bw * av.z - (av.x * bv.y - av.y * bv.x),
    );
    (w, v)
}

/// Minimum geodesic distance between two rotations, in `[0, π]`.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    let (w, v) = relative_vector(a.0.quaternion(), b.0.quaternion());
    2.0 * v.norm().atan2(w.abs())
}

/// Geodesic distance on raw `(w, x, y, z)` quaternions with unit-norm validation.
pub fn geodesic_distance_wxyz(a: [f64; 4], b: [f64; 4]) -> Result<f64, GeometryError> {
    let ra = Rotation::try_from_wxyz(a[0], a[1], a[2], a[3])?;
    let rb = Rotation::try_from_wxyz(b[0], b[1], b[2], b[3])?;
    Ok(geodesic_distance(&ra, &rb))
}

/// Rigid transform: `p ↦ rotation · p + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SE3Pose {
    pub translation: Vec3,
    pub rotation: Rotation,
}

impl SE3Pose {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(translation: Vec3, rotation: Rotation) -> Self {
        Self { translation, rotation }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(translation, Rotation::identity())
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Self::new(Vec3::zeros(), rotation)
    }

    /// `(self ∘ other) · p = self · (other · p)`.
    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose {
            translation: self.translation + self.rotation.rotate(&other.translation),
            rotation: self.rotation.compose(&other.rotation),
        }
    }

    /// Left-to-right product of a chain, renormalizing the rotation every
    /// [`RENORMALIZE_EVERY`] products.
    pub fn compose_chain<'a, I: IntoIterator<Item = &'a SE3Pose>>(poses: I) -> SE3Pose {
        let mut acc = SE3Pose::identity();
        for (i, p) in poses.into_iter().enumerate() {
            acc = acc.compose(p);
            if (i + 1) % RENORMALIZE_EVERY == 0 {
                acc.rotation = acc.rotation.renormalized();
            }
        }
        acc
    }

    pub fn inverse(&self) -> SE3Pose {
        let inv = self.rotation.inverse();
        SE3Pose {
            translation: -inv.rotate(&self.translation),
            rotation: inv,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation.rotate(v)
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse().rotate(&(p - self.translation))
    }

    /// Perturbs the pose in a 6-dof chart: world-frame translation offset and
    /// body-frame rotation vector.
    pub fn retract(&self, delta_translation: &Vec3, delta_rotation: &Vec3) -> SE3Pose {
        SE3Pose {
            translation: self.translation + delta_translation,
            rotation: self.rotation.compose(&Rotation::from_rotation_vector(delta_rotation)),
        }
    }

    /// Inverse of [`SE3Pose::retract`]: chart coordinates of `other` around `self`.
    pub fn local_coordinates(&self, other: &SE3Pose) -> (Vec3, Vec3) {
        (
            other.translation - self.translation,
            self.rotation.inverse().compose(&other.rotation).to_rotation_vector(),
        )
    }

    /// Linear in translation, spherical in rotation.
    pub fn interpolate(&self, other: &SE3Pose, t: f64) -> SE3Pose {
        SE3Pose {
            translation: self.translation.lerp(&other.translation, t),
            rotation: self.rotation.slerp(&other.rotation, t),
        }
    }

    /// `[tx, ty, tz, qw, qx, qy, qz]`.
    pub fn to_array(&self) -> [f64; 7] {
        let [w, x, y, z] = self.rotation.wxyz();
        let t = &self.translation;
        [t.x, t.y, t.z, w, x, y, z]
    }

    pub fn try_from_slice(a: &[f64]) -> Result<SE3Pose, GeometryError> {
        if a.len() != 7 {
            return Err(GeometryError::PoseArrayLength(a.len()));
        }
        if !a[..3].iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite { what: "translation" });
        }
        Ok(SE3Pose {
            translation: Vec3::new(a[0], a[1], a[2]),
            rotation: Rotation::try_from_wxyz(a[3], a[4], a[5], a[6])?,
        })
    }

    /// Largest of translation gap (m) and rotation gap (rad).
    pub fn distance_to(&self, other: &SE3Pose) -> f64 {
        (self.translation - other.translation)
            .norm()
            .max(geodesic_distance(&self.rotation, &other.rotation))
    }
}

/// The pose of `world_pose` expressed in `frame`: `frame ∘ result = world_pose`.
pub fn relative_pose(world_pose: &SE3Pose, frame: &SE3Pose) -> SE3Pose {
    frame.inverse().compose(world_pose)
}

impl Serialize for SE3Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SE3Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = Vec::<f64>::deserialize(d)?;
        SE3Pose::try_from_slice(&a).map_err(serde::de::Error::custom)
    }
}

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.wxyz().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        Rotation::try_from_wxyz(w, x, y, z).map_err(serde::de::Error::custom)
    }
}
