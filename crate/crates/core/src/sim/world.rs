//! World state and the fixed-step integrator.

use std::ops::AddAssign;

use nalgebra::{Matrix3, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use super::{ObjectSpec, PhysicsParams, SimError, Simulator, CONTACT_FLAG_THRESHOLD, GRAVITY};
use crate::geometry::{Rotation, SE3Pose, Vec3};
use crate::kinematics::{HandState, JointConfig};

/// Per-fingertip contact summary, in model fingertip order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactReport {
    pub forces: Vec<f64>,
    pub flags: Vec<bool>,
}

impl ContactReport {
    pub fn from_forces(forces: Vec<f64>) -> Self {
        let flags = forces.iter().map(|&f| f > CONTACT_FLAG_THRESHOLD).collect();
        Self { forces, flags }
    }

    pub fn any(&self) -> bool {
        self.flags.iter().any(|&f| f)
    }
}

/// Snapshot of the world after a control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub hand: HandState,
    pub object_pose: SE3Pose,
    pub contacts: ContactReport,
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    sim: Simulator,
    object: ObjectSpec,
    params: PhysicsParams,
    inertia_body: Matrix3<f64>,
    inertia_body_inv: Matrix3<f64>,
    support: Vec<Vec3>,
    support_scale: f64,
    radii: Vec<f64>,
    tips: Vec<usize>,

    object_pose: SE3Pose,
    object_lin_vel: Vec3,
    /// World frame.
    object_ang_vel: Vec3,
    palm_pose: SE3Pose,
    palm_lin_vel: Vec3,
    palm_ang_vel: Vec3,
    joints: Vec<f64>,
    joint_vel: Vec<f64>,
    target: HandState,
    time: f64,
    steps: usize,

    prev_keypoints: Vec<Vec3>,
    /// Object-frame friction anchor per hand keypoint.
    hand_anchors: Vec<Option<Vec3>>,
    /// World-frame friction anchor per object support point.
    table_anchors: Vec<Option<Vec3>>,
    tip_forces: Vec<f64>,
    max_table_penetration: f64,
}

/// Linearized contact used by the implicit object update.
struct Linearized {
    /// Contact point relative to the object center (world frame).
    r: Vec3,
    n: Vec3,
    kn: f64,
    cn: f64,
    /// Tangential stiffness and damping; zero while sliding.
    kt: f64,
    ct: f64,
}

/// Accumulates `k·Jᵀ P J` and `c·Jᵀ P J` for a point Jacobian `J = [I, -[r]ₓ]`.
fn add_point_terms(stiff: &mut Matrix6<f64>, damp: &mut Matrix6<f64>, c: &Linearized) {
    let nn = c.n * c.n.transpose();
    let kp = nn * c.kn + (Matrix3::identity() - nn) * c.kt;
    let cp = nn * c.cn + (Matrix3::identity() - nn) * c.ct;
    let rx = c.r.cross_matrix();
    for (m, p) in [(stiff, kp), (damp, cp)] {
        // JᵀPJ = [[P, -P·rx], [rx·P, -rx·P·rx]] since rxᵀ = -rx.
        let mut blk = Matrix6::zeros();
        blk.fixed_view_mut::<3, 3>(0, 0).copy_from(&p);
        blk.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-p * rx));
        blk.fixed_view_mut::<3, 3>(3, 0).copy_from(&(rx * p));
        blk.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-rx * p * rx));
        *m += blk;
    }
}

/// Builds a world at `t = 0` with zero velocities.
pub fn spawn(
    sim: &Simulator,
    object: &ObjectSpec,
    object_pose: SE3Pose,
    hand_init: HandState,
    params: PhysicsParams,
) -> Result<SimWorld, SimError> {
    object.validate().map_err(SimError::InvalidSetup)?;
    if !(params.mass > 0.0 && params.mass.is_finite()) || !(params.friction >= 0.0) {
        return Err(SimError::InvalidSetup(format!(
            "bad physics params: mass {} friction {}",
            params.mass, params.friction
        )));
    }
    let model = sim.model();
    if hand_init.joints.len() != model.dof_count() {
        return Err(SimError::DofMismatch {
            expected: model.dof_count(),
            got: hand_init.joints.len(),
        });
    }
    let cfg = sim.config();
    let lowest = object.lowest_point(&object_pose);
    if lowest < -0.002 {
        return Err(SimError::InvalidSetup(format!(
            "object starts {:.4} m below the table",
            -lowest
        )));
    }
    let hand = HandState::new(hand_init.palm_pose, model.clamp_to_limits(&hand_init.joints));
    let keypoints = model.keypoint_positions(&hand).expect("dof checked");
    let radii: Vec<f64> = model.keypoints().iter().map(|k| cfg.sphere_radius(&k.name)).collect();
    for (i, (kp, r)) in keypoints.iter().zip(&radii).enumerate() {
        let q = object.query(&object_pose.inverse_transform_point(kp));
        let overlap = r - q.distance;
        if overlap > cfg.spawn_overlap_tolerance {
            return Err(SimError::InvalidSetup(format!(
                "hand keypoint `{}` overlaps the object by {:.4} m",
                model.keypoints()[i].name,
                overlap
            )));
        }
    }
    let inertia_body = object.inertia(params.mass);
    let inertia_body_inv = inertia_body
        .try_inverse()
        .ok_or_else(|| SimError::InvalidSetup("singular inertia".into()))?;
    let (support, support_scale) = object.support_points();
    let tips = model.fingertip_indices();
    let n_kp = keypoints.len();
    let n_support = support.len();
    let dof = model.dof_count();
    Ok(SimWorld {
        sim: sim.clone(),
        object: object.clone(),
        params,
        inertia_body,
        inertia_body_inv,
        support,
        support_scale,
        radii,
        tips: tips.clone(),
        object_pose,
        object_lin_vel: Vec3::zeros(),
        object_ang_vel: Vec3::zeros(),
        palm_pose: hand.palm_pose,
        palm_lin_vel: Vec3::zeros(),
        palm_ang_vel: Vec3::zeros(),
        joints: hand.joints.angles.clone(),
        joint_vel: vec![0.0; dof],
        target: hand,
        time: 0.0,
        steps: 0,
        prev_keypoints: keypoints,
        hand_anchors: vec![None; n_kp],
        table_anchors: vec![None; n_support],
        tip_forces: vec![0.0; tips.len()],
        max_table_penetration: 0.0,
    })
}

/// Advances one control period toward `action`.
pub fn step(world: &mut SimWorld, action: &HandState) -> Result<(), SimError> {
    world.step(action)
}

pub fn contacts(world: &SimWorld) -> ContactReport {
    ContactReport::from_forces(world.tip_forces.clone())
}

impl SimWorld {
    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn object(&self) -> &ObjectSpec {
        &self.object
    }

    pub fn params(&self) -> &PhysicsParams {
        &self.params
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn object_pose(&self) -> &SE3Pose {
        &self.object_pose
    }

    pub fn object_velocity(&self) -> (Vec3, Vec3) {
        (self.object_lin_vel, self.object_ang_vel)
    }

    /// Overrides the object's linear and (world-frame) angular velocity.
    pub fn set_object_velocity(&mut self, linear: Vec3, angular: Vec3) {
        self.object_lin_vel = linear;
        self.object_ang_vel = angular;
    }

    pub fn hand_state(&self) -> HandState {
        HandState::new(self.palm_pose, JointConfig::new(self.joints.clone()))
    }

    pub fn joint_velocities(&self) -> &[f64] {
        &self.joint_vel
    }

    /// Deepest object-table penetration seen so far (m).
    pub fn max_table_penetration(&self) -> f64 {
        self.max_table_penetration
    }

    pub fn contacts(&self) -> ContactReport {
        contacts(self)
    }

    pub fn observe(&self) -> Observation {
        Observation {
            time: self.time,
            hand: self.hand_state(),
            object_pose: self.object_pose,
            contacts: self.contacts(),
        }
    }

    /// Kinetic plus gravitational potential energy of the object (J).
    pub fn object_energy(&self) -> f64 {
        let r = self.object_pose.rotation.matrix();
        let inertia = r * self.inertia_body * r.transpose();
        0.5 * self.params.mass * self.object_lin_vel.norm_squared()
            + 0.5 * self.object_ang_vel.dot(&(inertia * self.object_ang_vel))
            + self.params.mass * GRAVITY * self.object_pose.translation.z
    }

    pub fn step(&mut self, action: &HandState) -> Result<(), SimError> {
        let dof = self.joints.len();
        if action.joints.len() != dof {
            return Err(SimError::DofMismatch {
                expected: dof,
                got: action.joints.len(),
            });
        }
        self.target = action.clone();
        let n = self.sim.config().substeps.max(1);
        let dt = self.sim.config().substep_dt();
        for _ in 0..n {
            self.substep(dt);
        }
        self.steps += 1;
        self.time = self.steps as f64 * self.sim.config().control_dt();
        self.check_finite()
    }

    fn check_finite(&self) -> Result<(), SimError> {
        let bad = |what: &str| {
            Err(SimError::NumericalBlowup {
                step: self.steps,
                what: what.to_string(),
            })
        };
        let finite3 = |v: &Vec3| v.iter().all(|x| x.is_finite());
        if !finite3(&self.object_pose.translation) || !finite3(&self.object_lin_vel) || !finite3(&self.object_ang_vel) {
            return bad("object state");
        }
        if !self.object_pose.rotation.wxyz().iter().all(|x| x.is_finite()) {
            return bad("object orientation");
        }
        if self.object_lin_vel.norm() > 100.0 || self.object_ang_vel.norm() > 1000.0 {
            return bad("object velocity out of range");
        }
        if !self.joints.iter().chain(&self.joint_vel).all(|x| x.is_finite()) {
            return bad("joint state");
        }
        if !finite3(&self.palm_pose.translation) {
            return bad("palm state");
        }
        Ok(())
    }

    fn substep(&mut self, dt: f64) {
        let sim = self.sim.clone();
        let model = sim.model();
        let cfg = sim.config();
        let hand = HandState::new(self.palm_pose, JointConfig::new(self.joints.clone()));
        let poses = model.link_poses(&hand).expect("dof checked");
        let keypoints = model.keypoints_from_link_poses(&poses);
        let frames = model.joint_frames(&poses);

        let mass = self.params.mass;
        let mu = self.params.friction;
        let com = self.object_pose.translation;
        let mut force = Vec3::new(0.0, 0.0, -GRAVITY * mass);
        let mut torque = Vec3::zeros();
        let mut joint_torque = vec![0.0; self.joints.len()];
        let mut kp_normal = vec![0.0; keypoints.len()];
        let mut linearized: Vec<Linearized> = Vec::new();

        let apply_to_hand = |joint_torque: &mut [f64], kp: usize, point: &Vec3, f: &Vec3| {
            for &j in model.keypoint_chain(kp) {
                let (origin, axis) = &frames[j];
                joint_torque[j] += axis.dot(&(point - origin).cross(f));
            }
        };

        // Hand spheres against the object and the table.
        let k_h = cfg.hand_stiffness;
        let c_h = cfg.hand_damping;
        let kt_h = cfg.tangential_ratio * k_h;
        for (i, kp) in keypoints.iter().enumerate() {
            let r = self.radii[i];
            let v_hand = (kp - self.prev_keypoints[i]) / dt;

            let local = self.object_pose.inverse_transform_point(kp);
            let q = self.object.query(&local);
            if q.distance < r {
                let pen = r - q.distance;
                let n = self.object_pose.rotation.rotate(&q.normal);
                let p_obj = self.object_pose.transform_point(&q.point);
                let p_hand = kp - n * r;
                let v_obj = self.object_lin_vel + self.object_ang_vel.cross(&(p_obj - com));
                let v_rel = v_hand - v_obj;
                let vn = v_rel.dot(&n);
                let fn_ = (k_h * pen - c_h * vn).max(0.0);
                kp_normal[i] = fn_;

                // Tangential spring toward the stick anchor, capped by Coulomb.
                let anchor = match self.hand_anchors[i] {
                    Some(a) => self.object_pose.transform_point(&a),
                    None => p_hand,
                };
                let d = p_hand - anchor;
                let d_t = d - n * d.dot(&n);
                let v_t = v_rel - n * vn;
                let mut f_t = d_t * kt_h + v_t * c_h;
                let cap = mu * fn_;
                let mag = f_t.norm();
                let mut new_anchor = anchor;
                let sliding = mag > cap;
                if sliding {
                    f_t *= if mag > 0.0 { cap / mag } else { 0.0 };
                    let dn = d_t.norm();
                    new_anchor = if dn > 0.0 { p_hand - d_t * ((cap / kt_h).min(dn) / dn) } else { p_hand };
                }
                self.hand_anchors[i] = Some(self.object_pose.inverse_transform_point(&new_anchor));

                // f_t drags the object along with the hand.
                let f_obj = -n * fn_ + f_t;
                force += f_obj;
                torque += (p_obj - com).cross(&f_obj);
                apply_to_hand(&mut joint_torque, i, &p_hand, &(-f_obj));
                if fn_ > 0.0 {
                    linearized.push(Linearized {
                        r: p_obj - com,
                        n,
                        kn: k_h,
                        cn: c_h,
                        kt: if sliding { 0.0 } else { kt_h },
                        ct: if sliding { 0.0 } else { c_h },
                    });
                }
            } else {
                self.hand_anchors[i] = None;
            }

            let in_table = kp.x.abs() <= cfg.table_half_extent && kp.y.abs() <= cfg.table_half_extent;
            if in_table && kp.z < r {
                let pen = r - kp.z;
                let fz = (cfg.table_stiffness * pen - cfg.table_damping * v_hand.z).max(0.0);
                let p = Vec3::new(kp.x, kp.y, 0.0);
                apply_to_hand(&mut joint_torque, i, &p, &Vec3::new(0.0, 0.0, fz));
            }
        }
        for (slot, &kp) in self.tips.iter().enumerate() {
            self.tip_forces[slot] = kp_normal[kp];
        }

        // Object support points against the table.
        let k_t = cfg.table_stiffness * self.support_scale;
        let c_t = cfg.table_damping * self.support_scale;
        let kt_t = cfg.tangential_ratio * k_t;
        for (s, local) in self.support.iter().enumerate() {
            let p = self.object_pose.transform_point(local);
            let in_table = p.x.abs() <= cfg.table_half_extent && p.y.abs() <= cfg.table_half_extent;
            if !(in_table && p.z < 0.0) {
                self.table_anchors[s] = None;
                continue;
            }
            let pen = -p.z;
            self.max_table_penetration = self.max_table_penetration.max(pen);
            let v = self.object_lin_vel + self.object_ang_vel.cross(&(p - com));
            let fz = (k_t * pen - c_t * v.z).max(0.0);
            let anchor = self.table_anchors[s].unwrap_or(p);
            let d = Vec3::new(p.x - anchor.x, p.y - anchor.y, 0.0);
            let mut f_t = -d * kt_t - Vec3::new(v.x, v.y, 0.0) * c_t;
            let cap = mu * fz;
            let mag = f_t.norm();
            let mut new_anchor = anchor;
            let sliding = mag > cap;
            if sliding {
                f_t *= if mag > 0.0 { cap / mag } else { 0.0 };
                let dn = d.norm();
                new_anchor = if dn > 0.0 { p - d * ((cap / kt_t).min(dn) / dn) } else { p };
            }
            self.table_anchors[s] = Some(new_anchor);
            let f = Vec3::new(f_t.x, f_t.y, fz);
            force += f;
            torque += (p - com).cross(&f);
            if fz > 0.0 {
                linearized.push(Linearized {
                    r: p - com,
                    n: Vec3::z(),
                    kn: k_t,
                    cn: c_t,
                    kt: if sliding { 0.0 } else { kt_t },
                    ct: if sliding { 0.0 } else { c_t },
                });
            }
        }

        self.integrate_object(force, torque, &linearized, dt);

        // Fingers: torque-limited PD plus contact torques.
        let joints = model.joints();
        for j in 0..self.joints.len() {
            let joint = &joints[j];
            let target = self.target.joints.angles[j].clamp(joint.lower, joint.upper);
            let pd = (cfg.finger_kp * (target - self.joints[j]) - cfg.finger_kd * self.joint_vel[j])
                .clamp(-joint.max_torque, joint.max_torque);
            let tau = pd + joint_torque[j] - cfg.joint_damping * self.joint_vel[j];
            self.joint_vel[j] += tau / cfg.joint_armature * dt;
            self.joints[j] += self.joint_vel[j] * dt;
            if self.joints[j] < joint.lower {
                self.joints[j] = joint.lower;
                self.joint_vel[j] = self.joint_vel[j].max(0.0);
            } else if self.joints[j] > joint.upper {
                self.joints[j] = joint.upper;
                self.joint_vel[j] = self.joint_vel[j].min(0.0);
            }
        }

        // Palm: critically damped servo in the 6-dof chart, blind to contact.
        let om = cfg.palm_servo_omega;
        let e_t = self.target.palm_pose.translation - self.palm_pose.translation;
        let e_r = self
            .target
            .palm_pose
            .rotation
            .compose(&self.palm_pose.rotation.inverse())
            .to_rotation_vector();
        self.palm_lin_vel += (e_t * (om * om) - self.palm_lin_vel * (2.0 * om)) * dt;
        self.palm_ang_vel += (e_r * (om * om) - self.palm_ang_vel * (2.0 * om)) * dt;
        self.palm_pose.translation += self.palm_lin_vel * dt;
        self.palm_pose.rotation = Rotation::from_rotation_vector(&(self.palm_ang_vel * dt))
            .compose(&self.palm_pose.rotation)
            .renormalized();

        self.prev_keypoints = keypoints;
    }

    /// Linearly implicit Euler on the contact springs and dampers:
    /// `(M + dt·D + dt²·K) Δν = dt·(f − dt·K·ν)`, gyroscopic term explicit.
    fn integrate_object(&mut self, force: Vec3, torque: Vec3, linearized: &[Linearized], dt: f64) {
        let r = self.object_pose.rotation.matrix();
        let inertia = r * self.inertia_body * r.transpose();
        let w = self.object_ang_vel;
        let torque = torque - w.cross(&(inertia * w));
        let nu = Vector6::new(
            self.object_lin_vel.x,
            self.object_lin_vel.y,
            self.object_lin_vel.z,
            w.x,
            w.y,
            w.z,
        );
        let f = Vector6::new(force.x, force.y, force.z, torque.x, torque.y, torque.z);
        let delta = if linearized.is_empty() {
            let inertia_inv = r * self.inertia_body_inv * r.transpose();
            let lin = force / self.params.mass;
            let ang = inertia_inv * torque;
            Vector6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z) * dt
        } else {
            let mut stiff = Matrix6::zeros();
            let mut damp = Matrix6::zeros();
            for c in linearized {
                add_point_terms(&mut stiff, &mut damp, c);
            }
            let mut lhs = damp * dt + stiff * (dt * dt);
            for i in 0..3 {
                lhs[(i, i)] += self.params.mass;
            }
            lhs.fixed_view_mut::<3, 3>(3, 3).add_assign(&inertia);
            let rhs = (f - stiff * nu * dt) * dt;
            match lhs.cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => Vector6::repeat(f64::NAN),
            }
        };
        self.object_lin_vel += Vec3::new(delta[0], delta[1], delta[2]);
        self.object_ang_vel += Vec3::new(delta[3], delta[4], delta[5]);
        self.object_pose.translation += self.object_lin_vel * dt;
        self.object_pose.rotation = Rotation::from_rotation_vector(&(self.object_ang_vel * dt))
            .compose(&self.object_pose.rotation)
            .renormalized();
    }
}
