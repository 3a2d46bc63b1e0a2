//! Simplified rigid-body grasp simulator.
//!
//! One primitive object rests on a finite table at `z = 0`. The hand is a
//! kinematically servoed palm carrying torque-limited PD fingers. Hand
//! geometry is approximated by spheres at the model keypoints; contacts are
//! penalty springs with Coulomb-capped tangential springs. Integration is
//! semi-implicit Euler with a fixed number of substeps per control step.

mod object;
mod rollout;
mod world;

pub use object::{ObjectSpec, Shape, SurfaceQuery};
pub use rollout::{
    offset_actions, rollout_world, stability_check, stability_draw, trajectory_summary, RolloutOutcome,
    RolloutReport, StabilityConfig, StabilityOutcome, SuccessSpec,
};
pub use world::{contacts, spawn, step, ContactReport, Observation, SimWorld};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{SE3Pose, Vec3};
use crate::kinematics::{HandModel, HandState};

/// Contact force above which a fingertip counts as touching (N).
pub const CONTACT_FLAG_THRESHOLD: f64 = 0.5;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid setup: {0}")]
    InvalidSetup(String),
    #[error("action has {got} joint targets, model has {expected}")]
    DofMismatch { expected: usize, got: usize },
    #[error("numerical blow-up at control step {step}: {what}")]
    NumericalBlowup { step: usize, what: String },
    #[error("empty action sequence")]
    EmptyActions,
}

/// Simulator constants. Everything that is not randomized per rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub control_rate_hz: f64,
    pub substeps: usize,
    /// Palm servo natural frequency (rad/s); the servo is critically damped.
    pub palm_servo_omega: f64,
    pub finger_kp: f64,
    pub finger_kd: f64,
    /// Reflected rotor inertia per finger joint (kg·m²).
    pub joint_armature: f64,
    pub joint_damping: f64,
    pub table_stiffness: f64,
    pub table_damping: f64,
    pub hand_stiffness: f64,
    pub hand_damping: f64,
    /// Tangential spring stiffness as a fraction of the normal stiffness.
    pub tangential_ratio: f64,
    /// Table top is `[-half_extent, half_extent]²`.
    pub table_half_extent: f64,
    pub palm_radius: f64,
    pub finger_radius: f64,
    pub tip_radius: f64,
    /// Spawn rejects hand-object overlap deeper than this (m).
    pub spawn_overlap_tolerance: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_rate_hz: 12.0,
            substeps: 20,
            palm_servo_omega: 40.0,
            finger_kp: 3.0,
            finger_kd: 0.15,
            joint_armature: 0.002,
            joint_damping: 0.01,
            table_stiffness: 3000.0,
            table_damping: 6.0,
            hand_stiffness: 1500.0,
            hand_damping: 4.0,
            tangential_ratio: 1.0,
            table_half_extent: 0.4,
            palm_radius: 0.025,
            finger_radius: 0.011,
            tip_radius: 0.012,
            spawn_overlap_tolerance: 0.005,
        }
    }
}

impl SimConfig {
    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_rate_hz
    }

    pub fn substep_dt(&self) -> f64 {
        self.control_dt() / self.substeps as f64
    }

    /// Sphere proxy radius for a keypoint name.
    pub fn sphere_radius(&self, keypoint: &str) -> f64 {
        if keypoint == crate::kinematics::PALM_KEYPOINT {
            self.palm_radius
        } else if keypoint.ends_with("tip") {
            self.tip_radius
        } else {
            self.finger_radius
        }
    }
}

/// Sampling ranges for domain randomization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizationRanges {
    pub mass: (f64, f64),
    pub friction: (f64, f64),
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            mass: (0.1, 0.25),
            friction: (0.7, 0.85),
        }
    }
}

/// One draw of the randomized physical parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsParams {
    pub mass: f64,
    pub friction: f64,
    /// Std-dev of the per-trajectory action translation noise (m).
    pub noise_std: f64,
    pub seed: u64,
}

pub const DEFAULT_NOISE_STD: f64 = 0.01;

impl PhysicsParams {
    /// Nominal object mass, mid-range friction, default noise, seed 0.
    pub fn nominal(object: &ObjectSpec) -> Self {
        Self {
            mass: object.nominal_mass,
            friction: 0.775,
            noise_std: DEFAULT_NOISE_STD,
            seed: 0,
        }
    }

    /// The per-trajectory translation offset injected into every palm target.
    pub fn noise_offset(&self) -> Vec3 {
        if self.noise_std <= 0.0 {
            return Vec3::zeros();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6e6f_6973_6521);
        let n = Normal::new(0.0, self.noise_std).expect("finite std");
        Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng))
    }
}

/// Draws mass and friction from the default ranges; deterministic per seed.
pub fn randomize(params_base: &PhysicsParams, seed: u64) -> PhysicsParams {
    randomize_in(&RandomizationRanges::default(), params_base, seed)
}

pub fn randomize_in(ranges: &RandomizationRanges, params_base: &PhysicsParams, seed: u64) -> PhysicsParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PhysicsParams {
        mass: rng.random_range(ranges.mass.0..=ranges.mass.1),
        friction: rng.random_range(ranges.friction.0..=ranges.friction.1),
        noise_std: params_base.noise_std,
        seed,
    }
}

/// Shared, immutable simulation context: hand model plus constants.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: Arc<HandModel>,
    config: Arc<SimConfig>,
}

impl Simulator {
    pub fn new(model: HandModel, config: SimConfig) -> Self {
        Self {
            model: Arc::new(model),
            config: Arc::new(config),
        }
    }

    pub fn model(&self) -> &HandModel {
        &self.model
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn spawn(
        &self,
        object: &ObjectSpec,
        object_pose: SE3Pose,
        hand_init: HandState,
        params: PhysicsParams,
    ) -> Result<SimWorld, SimError> {
        spawn(self, object, object_pose, hand_init, params)
    }

    /// Rolls out an open-loop action sequence from a fresh world. No noise
    /// is injected; see [`offset_actions`].
    pub fn rollout(
        &self,
        object: &ObjectSpec,
        object_pose: SE3Pose,
        hand_init: &HandState,
        actions: &[HandState],
        params: PhysicsParams,
        checks: &SuccessSpec,
    ) -> Result<RolloutOutcome, SimError> {
        rollout::rollout(self, object, object_pose, hand_init, actions, params, checks)
    }

    pub fn sample_surface_points(&self, object: &ObjectSpec, pose: &SE3Pose, n: usize, seed: u64) -> Vec<Vec3> {
        object.sample_surface_points(pose, n.max(1), seed)
    }
}

/// Area-uniform surface samples of `object` at `pose`; `n ≥ 1`.
pub fn sample_surface_points(object: &ObjectSpec, pose: &SE3Pose, n: usize, seed: u64) -> Vec<Vec3> {
    object.sample_surface_points(pose, n.max(1), seed)
}
