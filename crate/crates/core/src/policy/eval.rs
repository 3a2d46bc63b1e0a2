//! Multi-attempt closed-loop evaluation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fixtures::upright_pose;
use crate::geometry::SE3Pose;
use crate::kinematics::HandState;
use crate::refine::{derive_seed, InitialHandDistribution};
use crate::retarget::ObservedFrame;
use crate::sim::{randomize, ObjectSpec, Observation, PhysicsParams, SimError, Simulator};

use super::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub attempts: usize,
    /// Control steps per attempt.
    pub max_steps: usize,
    pub seed: u64,
    pub hand: InitialHandDistribution,
    /// Object center is uniform in `[-object_xy, object_xy]²` (m).
    pub object_xy: f64,
    /// Object yaw is uniform in `[-object_yaw, object_yaw]` (rad).
    pub object_yaw: f64,
    pub randomize_physics: bool,
    /// Success: the object center stays this far above its start height ...
    pub lift_height: f64,
    /// ... for this many consecutive observations.
    pub hold_steps: usize,
    /// A drop is a fall below `drop_low` after rising above `drop_high` (m).
    pub drop_high: f64,
    pub drop_low: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 50,
            attempts: 3,
            max_steps: 72,
            seed: 0,
            hand: InitialHandDistribution::default(),
            object_xy: 0.04,
            object_yaw: PI,
            randomize_physics: true,
            lift_height: 0.10,
            hold_steps: 6,
            drop_high: 0.05,
            drop_low: 0.02,
        }
    }
}

/// Initial condition of one attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub object_pose: SE3Pose,
    pub hand_start: HandState,
    pub params: PhysicsParams,
}

/// Upright object at a random planar pose, hand from the start distribution.
pub fn random_scenario(sim: &Simulator, object: &ObjectSpec, cfg: &EvalConfig, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xy = cfg.object_xy;
    let (x, y) = if xy > 0.0 { (rng.random_range(-xy..=xy), rng.random_range(-xy..=xy)) } else { (0.0, 0.0) };
    let yaw = if cfg.object_yaw > 0.0 { rng.random_range(-cfg.object_yaw..=cfg.object_yaw) } else { 0.0 };
    let object_pose = upright_pose(object, x, y, yaw);
    let hand_start = cfg.hand.sample(sim.model(), &object_pose.translation, &mut rng);
    let nominal = PhysicsParams::nominal(object);
    let params = if cfg.randomize_physics { randomize(&nominal, rng.random()) } else { nominal };
    Scenario {
        object_pose,
        hand_start,
        params,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptEnd {
    Success { step: usize },
    Drop { step: usize },
    Timeout,
    /// The world could not be built or diverged.
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub attempts: Vec<AttemptEnd>,
    /// One-based attempt of the first success.
    pub success_attempt: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub attempts: usize,
    /// `rates[k]`: fraction of episodes that succeeded within `k + 1` attempts.
    pub rates: Vec<f64>,
    pub drops: usize,
    pub results: Vec<EpisodeResult>,
}

impl EvalReport {
    pub fn rate(&self, attempts: usize) -> f64 {
        self.rates.get(attempts.saturating_sub(1)).copied().unwrap_or(0.0)
    }

    pub fn is_monotone(&self) -> bool {
        self.rates.windows(2).all(|w| w[0] <= w[1])
    }
}

fn observed(o: &Observation) -> ObservedFrame {
    ObservedFrame {
        hand: o.hand.clone(),
        object_pose: o.object_pose,
        contacts: o.contacts.flags.clone(),
    }
}

fn run_attempt(policy: &mut dyn Policy, sim: &Simulator, object: &ObjectSpec, cfg: &EvalConfig, sc: &Scenario) -> AttemptEnd {
    let mut world = match sim.spawn(object, sc.object_pose, sc.hand_start.clone(), sc.params) {
        Ok(w) => w,
        Err(_) => return AttemptEnd::Invalid,
    };
    let z0 = sc.object_pose.translation.z;
    let mut history = vec![observed(&world.observe())];
    policy.reset(sim, object, &history[0]);
    let (mut held, mut peak) = (0, 0.0f64);
    for step in 1..=cfg.max_steps {
        let out = policy.act(sim, object, &history);
        let target = out.to_target(sim.model(), &history[history.len() - 1].hand);
        match world.step(&target) {
            Ok(()) => {}
            Err(SimError::NumericalBlowup { .. }) | Err(_) => return AttemptEnd::Invalid,
        }
        let obs = observed(&world.observe());
        let gain = obs.object_pose.translation.z - z0;
        history.push(obs);
        peak = peak.max(gain);
        held = if gain >= cfg.lift_height { held + 1 } else { 0 };
        if held >= cfg.hold_steps {
            return AttemptEnd::Success { step };
        }
        if peak >= cfg.drop_high && gain < cfg.drop_low {
            return AttemptEnd::Drop { step };
        }
    }
    AttemptEnd::Timeout
}

/// Runs `cfg.episodes` episodes of up to `cfg.attempts` attempts. An episode
/// ends at its first success; a drop resets the world to the next scenario
/// from `scenario(episode, attempt)`; a timeout or invalid world ends the
/// episode as a failure.
pub fn evaluate_with(
    policy: &mut dyn Policy,
    sim: &Simulator,
    object: &ObjectSpec,
    cfg: &EvalConfig,
    mut scenario: impl FnMut(usize, usize) -> Scenario,
) -> EvalReport {
    let mut successes = vec![0usize; cfg.attempts];
    let mut drops = 0;
    let mut results = Vec::with_capacity(cfg.episodes);
    for e in 0..cfg.episodes {
        let mut res = EpisodeResult {
            attempts: Vec::new(),
            success_attempt: None,
        };
        for a in 0..cfg.attempts {
            let end = run_attempt(policy, sim, object, cfg, &scenario(e, a));
            res.attempts.push(end);
            match end {
                AttemptEnd::Success { .. } => {
                    res.success_attempt = Some(a + 1);
                    successes[a] += 1;
                    break;
                }
                AttemptEnd::Drop { .. } => drops += 1,
                AttemptEnd::Timeout | AttemptEnd::Invalid => break,
            }
        }
        results.push(res);
    }
    let n = cfg.episodes.max(1) as f64;
    let mut cum = 0;
    let rates = successes
        .iter()
        .map(|s| {
            cum += s;
            cum as f64 / n
        })
        .collect();
    EvalReport {
        episodes: cfg.episodes,
        attempts: cfg.attempts,
        rates,
        drops,
        results,
    }
}

/// [`evaluate_with`] on random scenarios seeded per (episode, attempt).
pub fn evaluate(policy: &mut dyn Policy, sim: &Simulator, object: &ObjectSpec, cfg: &EvalConfig) -> EvalReport {
    evaluate_with(policy, sim, object, cfg, |e, a| {
        random_scenario(sim, object, cfg, derive_seed(cfg.seed, e as u64, a as u64))
    })
}
