//! Open-loop rollouts, lift success and the randomized stability check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    randomize_in, spawn, ObjectSpec, Observation, PhysicsParams, RandomizationRanges, SimError, SimWorld, Simulator,
};
use crate::geometry::{SE3Pose, Vec3};
use crate::kinematics::HandState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuccessSpec {
    /// Required rise of the object center over its start height (m).
    pub lift_height: f64,
    /// The lift must hold this long at the end of the rollout (s).
    pub hold_duration: f64,
    /// Object-table penetration allowed at any time (m).
    pub max_table_penetration: f64,
}

impl Default for SuccessSpec {
    fn default() -> Self {
        Self {
            lift_height: 0.10,
            hold_duration: 0.5,
            max_table_penetration: 0.002,
        }
    }
}

impl SuccessSpec {
    /// Number of trailing observations that must clear the lift line.
    pub fn hold_steps(&self, control_rate_hz: f64) -> usize {
        ((self.hold_duration * control_rate_hz).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub steps: usize,
    pub start_height: f64,
    pub final_height: f64,
    pub max_height_gain: f64,
    /// Minimum height gain over the hold window.
    pub hold_min_gain: f64,
    pub max_table_penetration: f64,
    /// Control steps with at least one flagged fingertip.
    pub contact_steps: usize,
    pub object_displacement: f64,
}

#[derive(Debug, Clone)]
pub struct RolloutOutcome {
    /// Initial observation followed by one per action.
    pub observations: Vec<Observation>,
    pub success: bool,
    pub report: RolloutReport,
}

impl RolloutOutcome {
    /// Poses and joints quantized at 1e-12, for bit-level comparisons.
    pub fn summary(&self) -> Vec<i64> {
        trajectory_summary(&self.observations)
    }
}

pub fn trajectory_summary(observations: &[Observation]) -> Vec<i64> {
    let q = |x: f64| (x * 1e12).round() as i64;
    let mut out = Vec::new();
    for o in observations {
        out.extend(o.object_pose.to_array().iter().map(|&x| q(x)));
        out.extend(o.hand.palm_pose.to_array().iter().map(|&x| q(x)));
        out.extend(o.hand.joints.angles.iter().map(|&x| q(x)));
    }
    out
}

/// Steps `world` through `actions` and scores the lift.
pub fn rollout_world(world: &mut SimWorld, actions: &[HandState], checks: &SuccessSpec) -> Result<RolloutOutcome, SimError> {
    if actions.is_empty() {
        return Err(SimError::EmptyActions);
    }
    let start = *world.object_pose();
    let mut observations = Vec::with_capacity(actions.len() + 1);
    observations.push(world.observe());
    for a in actions {
        world.step(a)?;
        observations.push(world.observe());
    }
    let rate = world.simulator().config().control_rate_hz;
    let report = score(&observations, &start, world.max_table_penetration(), checks, rate);
    let hold = checks.hold_steps(rate);
    let success = observations.len() > hold
        && report.hold_min_gain >= checks.lift_height
        && report.max_table_penetration <= checks.max_table_penetration;
    Ok(RolloutOutcome {
        observations,
        success,
        report,
    })
}

fn score(obs: &[Observation], start: &SE3Pose, penetration: f64, checks: &SuccessSpec, rate: f64) -> RolloutReport {
    let z0 = start.translation.z;
    let gains: Vec<f64> = obs.iter().map(|o| o.object_pose.translation.z - z0).collect();
    let hold = checks.hold_steps(rate).min(gains.len());
    let last = obs.last().expect("non-empty");
    RolloutReport {
        steps: obs.len() - 1,
        start_height: z0,
        final_height: last.object_pose.translation.z,
        max_height_gain: gains.iter().cloned().fold(f64::MIN, f64::max),
        hold_min_gain: gains[gains.len() - hold..].iter().cloned().fold(f64::MAX, f64::min),
        max_table_penetration: penetration,
        contact_steps: obs.iter().filter(|o| o.contacts.any()).count(),
        object_displacement: (last.object_pose.translation - start.translation).norm(),
    }
}

pub(crate) fn rollout(
    sim: &Simulator,
    object: &ObjectSpec,
    object_pose: SE3Pose,
    hand_init: &HandState,
    actions: &[HandState],
    params: PhysicsParams,
    checks: &SuccessSpec,
) -> Result<RolloutOutcome, SimError> {
    let mut world = spawn(sim, object, object_pose, hand_init.clone(), params)?;
    rollout_world(&mut world, actions, checks)
}

/// Adds a constant world-frame offset to every palm target.
pub fn offset_actions(actions: &[HandState], offset: &Vec3) -> Vec<HandState> {
    actions
        .iter()
        .map(|a| {
            let mut a = a.clone();
            a.palm_pose.translation += offset;
            a
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    /// Number of parameter draws that must all succeed.
    pub k: usize,
    /// Draw `k` params from `ranges`; otherwise reuse `base` for every draw.
    pub randomize: bool,
    pub ranges: RandomizationRanges,
    pub base: PhysicsParams,
    /// Draw `i` uses seed `seed + i`.
    pub seed: u64,
    pub perturb_duration: f64,
    pub jitter_translation: f64,
    pub jitter_rotation: f64,
    pub checks: SuccessSpec,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            k: 10,
            randomize: true,
            ranges: RandomizationRanges::default(),
            base: PhysicsParams {
                mass: 0.2,
                friction: 0.775,
                noise_std: super::DEFAULT_NOISE_STD,
                seed: 0,
            },
            seed: 0,
            perturb_duration: 3.0,
            jitter_translation: 0.005,
            jitter_rotation: 0.05,
            checks: SuccessSpec::default(),
        }
    }
}

impl StabilityConfig {
    pub fn draw(&self, i: usize) -> PhysicsParams {
        let seed = self.seed.wrapping_add(i as u64);
        if self.randomize {
            randomize_in(&self.ranges, &self.base, seed)
        } else {
            PhysicsParams { seed, ..self.base }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityOutcome {
    pub stable: bool,
    /// Outcome per evaluated draw; evaluation stops at the first failure.
    pub draws: Vec<bool>,
    pub params: Vec<PhysicsParams>,
}

/// Runs one draw: noisy open-loop rollout, then palm jitter around the
/// final action while checking the object stays above the lift line.
pub fn stability_draw(
    sim: &Simulator,
    object: &ObjectSpec,
    object_pose: SE3Pose,
    hand_init: &HandState,
    actions: &[HandState],
    params: PhysicsParams,
    cfg: &StabilityConfig,
) -> Result<bool, SimError> {
    let noisy = offset_actions(actions, &params.noise_offset());
    let mut world = spawn(sim, object, object_pose, hand_init.clone(), params)?;
    let out = rollout_world(&mut world, &noisy, &cfg.checks)?;
    if !out.success {
        return Ok(false);
    }
    let z0 = object_pose.translation.z;
    let hold = noisy.last().expect("non-empty").clone();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x6a69_7474_6572);
    let steps = (cfg.perturb_duration * sim.config().control_rate_hz).round() as usize;
    for _ in 0..steps {
        let dt = Vec3::from_fn(|_, _| rng.random_range(-1.0..=1.0) * cfg.jitter_translation);
        let dr = Vec3::from_fn(|_, _| rng.random_range(-1.0..=1.0) * cfg.jitter_rotation);
        let mut target = hold.clone();
        target.palm_pose = hold.palm_pose.retract(&dt, &dr);
        world.step(&target)?;
        if world.object_pose().translation.z - z0 < cfg.checks.lift_height {
            return Ok(false);
        }
    }
    Ok(world.max_table_penetration() <= cfg.checks.max_table_penetration)
}

/// True iff every one of the `k` draws lifts, holds and survives jitter.
pub fn stability_check(
    sim: &Simulator,
    object: &ObjectSpec,
    object_pose: SE3Pose,
    hand_init: &HandState,
    actions: &[HandState],
    cfg: &StabilityConfig,
) -> Result<StabilityOutcome, SimError> {
    if cfg.k == 0 {
        return Err(SimError::InvalidSetup("stability check needs k >= 1".into()));
    }
    if actions.is_empty() {
        return Err(SimError::EmptyActions);
    }
    // Draws run in order and stop at the first failure.
    let mut draws = Vec::with_capacity(cfg.k);
    let mut params = Vec::with_capacity(cfg.k);
    for i in 0..cfg.k {
        let p = cfg.draw(i);
        let ok = stability_draw(sim, object, object_pose, hand_init, actions, p, cfg)?;
        draws.push(ok);
        params.push(p);
        if !ok {
            break;
        }
    }
    Ok(StabilityOutcome {
        stable: draws.len() == cfg.k && draws.iter().all(|&d| d),
        draws,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{box_object, closure_config, design_grasp, golden_grasp, palm_down, upright_pose, GraspStyle};
    use crate::kinematics::HandModel;
    use crate::sim::SimConfig;

    fn sim() -> Simulator {
        Simulator::new(HandModel::four_finger(), SimConfig::default())
    }

    fn quiet(object: &ObjectSpec) -> PhysicsParams {
        PhysicsParams {
            noise_std: 0.0,
            ..PhysicsParams::nominal(object)
        }
    }

    fn lift_by(lift: f64) -> RolloutOutcome {
        let sim = sim();
        let obj = box_object();
        let pose = upright_pose(&obj, 0.0, 0.0, 0.1);
        let style = GraspStyle {
            lift_height: lift,
            ..GraspStyle::default()
        };
        let frames = design_grasp(sim.model(), &obj, &pose, &style);
        sim.rollout(&obj, pose, &frames[0], &frames[1..], quiet(&obj), &SuccessSpec::default())
            .unwrap()
    }

    #[test]
    fn sustained_lift_succeeds() {
        let out = lift_by(0.12);
        assert!(out.success, "{:?}", out.report);
        assert!(out.report.hold_min_gain >= 0.10);
        assert_eq!(out.observations.len(), out.report.steps + 1);
    }

    #[test]
    fn short_lift_fails() {
        let out = lift_by(0.05);
        assert!(!out.success);
        assert!(out.report.max_height_gain < 0.10);
    }

    #[test]
    fn hand_that_never_touches_fails_without_moving_the_object() {
        let sim = sim();
        let obj = box_object();
        let pose = upright_pose(&obj, 0.0, 0.0, 0.0);
        let palm = SE3Pose::new(Vec3::new(0.2, 0.2, 0.3), palm_down(0.0));
        let start = HandState::new(palm, closure_config(sim.model(), 0.0));
        let actions: Vec<HandState> = (1..=24)
            .map(|i| {
                let mut a = start.clone();
                a.palm_pose.translation.z += 0.005 * i as f64;
                a.joints = closure_config(sim.model(), i as f64 / 24.0);
                a
            })
            .collect();
        let out = sim.rollout(&obj, pose, &start, &actions, quiet(&obj), &SuccessSpec::default()).unwrap();
        assert!(!out.success);
        assert!(out.report.object_displacement < 1e-3);
        assert_eq!(out.report.contact_steps, 0);
    }

    #[test]
    fn empty_actions_are_rejected() {
        let sim = sim();
        let (obj, pose, frames) = golden_grasp(sim.model());
        let r = sim.rollout(&obj, pose, &frames[0], &[], quiet(&obj), &SuccessSpec::default());
        assert!(matches!(r, Err(SimError::EmptyActions)));
    }

    #[test]
    fn rollouts_are_bit_reproducible() {
        let sim = sim();
        let (obj, pose, frames) = golden_grasp(sim.model());
        let p = PhysicsParams {
            mass: 0.137,
            friction: 0.71,
            noise_std: 0.01,
            seed: 99,
        };
        let actions = offset_actions(&frames[1..], &p.noise_offset());
        let a = sim.rollout(&obj, pose, &frames[0], &actions, p, &SuccessSpec::default()).unwrap();
        let b = sim.rollout(&obj, pose, &frames[0], &actions, p, &SuccessSpec::default()).unwrap();
        assert_eq!(a.summary(), b.summary());
        assert_eq!(a.observations, b.observations);
    }

    #[test]
    fn degenerate_check_with_nominal_params() {
        let sim = sim();
        let (obj, pose, frames) = golden_grasp(sim.model());
        let cfg = StabilityConfig {
            k: 1,
            randomize: false,
            base: quiet(&obj),
            ..StabilityConfig::default()
        };
        let out = stability_check(&sim, &obj, pose, &frames[0], &frames[1..], &cfg).unwrap();
        assert!(out.stable);
        assert_eq!(out.draws, vec![true]);
    }

    #[test]
    fn golden_grasp_is_stable_and_friction_sensitive() {
        let sim = sim();
        let (obj, pose, frames) = golden_grasp(sim.model());
        let cfg = StabilityConfig::default();
        let out = stability_check(&sim, &obj, pose, &frames[0], &frames[1..], &cfg).unwrap();
        assert!(out.stable, "{:?}", out.draws);
        assert_eq!(out.params.len(), 10);
        for p in &out.params {
            assert!((0.1..=0.25).contains(&p.mass) && (0.7..=0.85).contains(&p.friction));
        }
        let slippery = StabilityConfig {
            ranges: RandomizationRanges {
                mass: (0.1, 0.25),
                friction: (0.2, 0.29),
            },
            ..cfg
        };
        let out = stability_check(&sim, &obj, pose, &frames[0], &frames[1..], &slippery).unwrap();
        assert!(!out.stable);
    }

    #[test]
    fn loose_grip_fails_under_perturbation() {
        let sim = sim();
        let obj = box_object();
        let pose = upright_pose(&obj, 0.0, 0.0, 0.3);
        let style = GraspStyle {
            squeeze: 0.0,
            ..GraspStyle::default()
        };
        let frames = design_grasp(sim.model(), &obj, &pose, &style);
        let out = stability_check(&sim, &obj, pose, &frames[0], &frames[1..], &StabilityConfig::default()).unwrap();
        assert!(!out.stable);
    }

    #[test]
    fn zero_draws_is_an_error() {
        let sim = sim();
        let (obj, pose, frames) = golden_grasp(sim.model());
        let cfg = StabilityConfig {
            k: 0,
            ..StabilityConfig::default()
        };
        assert!(stability_check(&sim, &obj, pose, &frames[0], &frames[1..], &cfg).is_err());
    }
}
