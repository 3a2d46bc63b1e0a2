//! Primitive object shapes: mass properties, closest-point queries, table
//! support points and surface sampling.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{SE3Pose, Vec3};

/// Rim points per cylinder cap used for table contact.
const CYLINDER_RIM_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Full extents along the local x, y, z axes (m).
    Box { w: f64, d: f64, h: f64 },
    /// Radius and height; the axis is local z (m).
    Cylinder { r: f64, h: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    pub shape: Shape,
    pub nominal_mass: f64,
}

/// Result of a point query against the solid.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceQuery {
    /// Closest surface point (local frame).
    pub point: Vec3,
    /// Outward unit normal at `point` (local frame).
    pub normal: Vec3,
    /// Signed distance: positive outside, negative inside.
    pub distance: f64,
}

impl ObjectSpec {
    pub fn new(name: impl Into<String>, shape: Shape, nominal_mass: f64) -> Self {
        Self {
            name: name.into(),
            shape,
            nominal_mass,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let dims_ok = match self.shape {
            Shape::Box { w, d, h } => w > 0.0 && d > 0.0 && h > 0.0,
            Shape::Cylinder { r, h } => r > 0.0 && h > 0.0,
        };
        if !dims_ok {
            return Err(format!("object `{}` has non-positive dimensions", self.name));
        }
        if !(self.nominal_mass > 0.0 && self.nominal_mass <= 0.25) {
            return Err(format!(
                "object `{}` nominal mass {} outside (0, 0.25] kg",
                self.name, self.nominal_mass
            ));
        }
        Ok(())
    }

    /// Body-frame inertia tensor about the center of mass for the given mass.
    pub fn inertia(&self, mass: f64) -> Matrix3<f64> {
        match self.shape {
            Shape::Box { w, d, h } => Matrix3::from_diagonal(&Vec3::new(
                mass * (d * d + h * h) / 12.0,
                mass * (w * w + h * h) / 12.0,
                mass * (w * w + d * d) / 12.0,
            )),
            Shape::Cylinder { r, h } => {
                let side = mass * (3.0 * r * r + h * h) / 12.0;
                Matrix3::from_diagonal(&Vec3::new(side, side, 0.5 * mass * r * r))
            }
        }
    }

    /// Points of the solid that can touch the table (local frame), with the
    /// per-point stiffness scale so that a face-down rest carries roughly
    /// the same total stiffness for every shape.
    pub fn support_points(&self) -> (Vec<Vec3>, f64) {
        match self.shape {
            Shape::Box { w, d, h } => {
                let mut pts = Vec::with_capacity(8);
                for sx in [-0.5, 0.5] {
                    for sy in [-0.5, 0.5] {
                        for sz in [-0.5, 0.5] {
                            pts.push(Vec3::new(sx * w, sy * d, sz * h));
                        }
                    }
                }
                (pts, 1.0)
            }
            Shape::Cylinder { r, h } => {
                let mut pts = Vec::with_capacity(2 * CYLINDER_RIM_POINTS);
                for sz in [-0.5, 0.5] {
                    for i in 0..CYLINDER_RIM_POINTS {
                        let a = std::f64::consts::TAU * i as f64 / CYLINDER_RIM_POINTS as f64;
                        pts.push(Vec3::new(r * a.cos(), r * a.sin(), sz * h));
                    }
                }
                (pts, 4.0 / CYLINDER_RIM_POINTS as f64)
            }
        }
    }

    /// Height of the center above the table when resting with `pose`'s
    /// rotation, i.e. minus the lowest support point's z offset.
    pub fn resting_height(&self, pose: &SE3Pose) -> f64 {
        let (pts, _) = self.support_points();
        -pts.iter()
            .map(|p| pose.rotation.rotate(p).z)
            .fold(f64::INFINITY, f64::min)
    }

    /// Lowest world z of the solid at `pose`.
    pub fn lowest_point(&self, pose: &SE3Pose) -> f64 {
        pose.translation.z - self.resting_height(pose)
    }

    /// Closest-point query for a local-frame point.
    pub fn query(&self, p: &Vec3) -> SurfaceQuery {
        match self.shape {
            Shape::Box { w, d, h } => query_box(p, &Vec3::new(0.5 * w, 0.5 * d, 0.5 * h)),
            Shape::Cylinder { r, h } => query_cylinder(p, r, 0.5 * h),
        }
    }

    pub fn surface_area(&self) -> f64 {
        match self.shape {
            Shape::Box { w, d, h } => 2.0 * (w * d + w * h + d * h),
            Shape::Cylinder { r, h } => std::f64::consts::TAU * r * (r + h),
        }
    }

    /// Circumscribed radius about the center.
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Box { w, d, h } => 0.5 * (w * w + d * d + h * h).sqrt(),
            Shape::Cylinder { r, h } => (r * r + 0.25 * h * h).sqrt(),
        }
    }

    /// Area-uniform samples on the surface, transformed by `pose`.
    pub fn sample_surface_points(&self, pose: &SE3Pose, n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| pose.transform_point(&self.sample_local_point(&mut rng)))
            .collect()
    }

    fn sample_local_point(&self, rng: &mut impl Rng) -> Vec3 {
        match self.shape {
            Shape::Box { w, d, h } => {
                let areas = [d * h, d * h, w * h, w * h, w * d, w * d];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random::<f64>() * total;
                let mut face = 5;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        face = i;
                        break;
                    }
                    pick -= a;
                }
                let u = rng.random::<f64>() - 0.5;
                let v = rng.random::<f64>() - 0.5;
                let sign = if face % 2 == 0 { -0.5 } else { 0.5 };
                match face / 2 {
                    0 => Vec3::new(sign * w, u * d, v * h),
                    1 => Vec3::new(u * w, sign * d, v * h),
                    _ => Vec3::new(u * w, v * d, sign * h),
                }
            }
            Shape::Cylinder { r, h } => {
                let side = std::f64::consts::TAU * r * h;
                let cap = std::f64::consts::PI * r * r;
                let pick = rng.random::<f64>() * (side + 2.0 * cap);
                let a = rng.random::<f64>() * std::f64::consts::TAU;
                if pick < side {
                    Vec3::new(r * a.cos(), r * a.sin(), (rng.random::<f64>() - 0.5) * h)
                } else {
                    let rad = r * rng.random::<f64>().sqrt();
                    let z = if pick < side + cap { -0.5 * h } else { 0.5 * h };
                    Vec3::new(rad * a.cos(), rad * a.sin(), z)
                }
            }
        }
    }
}

fn query_box(p: &Vec3, half: &Vec3) -> SurfaceQuery {
    let q = Vec3::new(p.x.abs() - half.x, p.y.abs() - half.y, p.z.abs() - half.z);
    let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0));
    let out_norm = outside.norm();
    if out_norm > 0.0 {
        let clamped = Vec3::new(
            p.x.clamp(-half.x, half.x),
            p.y.clamp(-half.y, half.y),
            p.z.clamp(-half.z, half.z),
        );
        return SurfaceQuery {
            point: clamped,
            normal: (p - clamped) / out_norm,
            distance: out_norm,
        };
    }
    // Inside: push out through the nearest face.
    let axis = if q.x >= q.y && q.x >= q.z {
        0
    } else if q.y >= q.z {
        1
    } else {
        2
    };
    let mut normal = Vec3::zeros();
    let s = if p[axis] >= 0.0 { 1.0 } else { -1.0 };
    normal[axis] = s;
    let mut point = *p;
    point[axis] = s * half[axis];
    SurfaceQuery {
        point,
        normal,
        distance: q[axis],
    }
}

fn query_cylinder(p: &Vec3, r: f64, half_h: f64) -> SurfaceQuery {
    let rho = (p.x * p.x + p.y * p.y).sqrt();
    let radial = if rho > 1e-12 {
        Vec3::new(p.x / rho, p.y / rho, 0.0)
    } else {
        Vec3::x()
    };
    let dr = rho - r;
    let dz = p.z.abs() - half_h;
    let sz = if p.z >= 0.0 { 1.0 } else { -1.0 };
    if dr > 0.0 || dz > 0.0 {
        let cr = rho.min(r);
        let cz = p.z.clamp(-half_h, half_h);
        let point = Vec3::new(radial.x * cr, radial.y * cr, cz);
        let diff = p - point;
        let dist = diff.norm();
        return SurfaceQuery {
            point,
            normal: diff / dist,
            distance: dist,
        };
    }
    if dr > dz {
        SurfaceQuery {
            point: Vec3::new(radial.x * r, radial.y * r, p.z),
            normal: radial,
            distance: dr,
        }
    } else {
        SurfaceQuery {
            point: Vec3::new(p.x, p.y, sz * half_h),
            normal: Vec3::new(0.0, 0.0, sz),
            distance: dz,
        }
    }
}
