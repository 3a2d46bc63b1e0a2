//! Correlated-sampling refinement with stability rejection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Rotation, Vec3};
use crate::kinematics::{HandModel, JointConfig};
use crate::retarget::{RobotTrajectory, Stage};
use crate::sim::{stability_check, ObjectSpec, SimError, Simulator, StabilityConfig};

use super::{attach_replay, derive_seed, replay, RefineError};

/// Per-dimension perturbation range over the action chart: palm translation
/// (m, world frame), palm rotation vector (rad, palm frame), then joints (rad).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationBounds {
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
}

impl PerturbationBounds {
    pub fn new(p_min: Vec<f64>, p_max: Vec<f64>) -> Result<Self, RefineError> {
        let b = Self { p_min, p_max };
        b.check()?;
        Ok(b)
    }

    /// Palm translation ±1 cm, rotation ±0.05 rad, joints −0.15..+0.25 rad
    /// (biased toward closing).
    pub fn default_for(dof: usize) -> Self {
        let mut p_min = vec![-0.01; 3];
        let mut p_max = vec![0.01; 3];
        p_min.extend([-0.05; 3]);
        p_max.extend([0.05; 3]);
        p_min.extend(std::iter::repeat_n(-0.15, dof));
        p_max.extend(std::iter::repeat_n(0.25, dof));
        Self { p_min, p_max }
    }

    pub fn zeros(dof: usize) -> Self {
        Self {
            p_min: vec![0.0; 6 + dof],
            p_max: vec![0.0; 6 + dof],
        }
    }

    fn check(&self) -> Result<(), RefineError> {
        if self.p_min.len() != self.p_max.len() {
            return Err(RefineError::InvalidInput("p_min and p_max lengths differ".into()));
        }
        if let Some(k) = (0..self.p_min.len()).find(|&k| !(self.p_min[k] <= self.p_max[k])) {
            return Err(RefineError::InvalidInput(format!("p_min[{k}] > p_max[{k}]")));
        }
        Ok(())
    }

    pub fn validate(&self, dof: usize) -> Result<(), RefineError> {
        self.check()?;
        if self.p_min.len() != 6 + dof {
            return Err(RefineError::InvalidInput(format!(
                "bounds have {} dimensions, expected {}",
                self.p_min.len(),
                6 + dof
            )));
        }
        Ok(())
    }

    /// `t·p_max + (1 − t)·p_min` componentwise.
    pub fn at(&self, t: f64) -> Vec<f64> {
        self.p_min.iter().zip(&self.p_max).map(|(lo, hi)| t * hi + (1.0 - t) * lo).collect()
    }
}

/// Draws one `t ~ U[0, 1]` and returns it with the coordinated perturbation
/// it selects for every dimension.
pub fn sample_perturbation<R: Rng>(bounds: &PerturbationBounds, rng: &mut R) -> (f64, Vec<f64>) {
    let t: f64 = rng.random_range(0.0..=1.0);
    (t, bounds.at(t))
}

/// Adds the perturbation to every action; frame `t + 1` follows action `t`.
pub fn apply_perturbation(model: &HandModel, traj: &RobotTrajectory, p: &[f64]) -> RobotTrajectory {
    let dt = Vec3::new(p[0], p[1], p[2]);
    let rv = Vec3::new(p[3], p[4], p[5]);
    let dr = Rotation::from_rotation_vector(&rv);
    let mut out = traj.clone();
    for a in out.actions.iter_mut() {
        a.palm_pose.translation += dt;
        if rv != Vec3::zeros() {
            a.palm_pose.rotation = a.palm_pose.rotation.compose(&dr).renormalized();
        }
        let angles = a.joints.angles.iter().zip(&p[6..]).map(|(q, d)| q + d).collect();
        a.joints = model.clamp_to_limits(&JointConfig::new(angles));
    }
    for (f, a) in out.frames.iter_mut().skip(1).zip(&out.actions) {
        f.hand = a.clone();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineBudget {
    /// Upper bound on the number of returned trajectories.
    pub target_count: usize,
    /// Candidates drawn per nominal at most.
    pub max_samples: usize,
    /// Stop sampling a nominal after this many acceptances.
    pub per_nominal: usize,
    pub seed: u64,
}

impl Default for RefineBudget {
    fn default() -> Self {
        Self {
            target_count: 10_000,
            max_samples: 8,
            per_nominal: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NominalStats {
    pub id: String,
    pub samples: usize,
    pub accepted: usize,
    /// Candidates whose setup was invalid or whose simulation diverged.
    pub invalid: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub nominals: Vec<NominalStats>,
    pub samples: usize,
    pub accepted: usize,
    /// Acceptances dropped by the `target_count` cap.
    pub truncated: usize,
}

impl RefineReport {
    pub fn acceptance_rate(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.accepted as f64 / self.samples as f64
        }
    }
}

pub(super) fn id_hash(id: &str) -> u64 {
    // FNV-1a
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Perturbs each nominal with coordinated samples and keeps candidates that
/// pass the stability check. Accepted trajectories store their seed, `t`,
/// parent id and the first draw's physics parameters, and carry the replay
/// under those parameters. Results are sorted by (nominal id, seed) and
/// truncated to `budget.target_count`.
pub fn refine(
    sim: &Simulator,
    nominals: &[RobotTrajectory],
    object: &ObjectSpec,
    budget: &RefineBudget,
    bounds: &PerturbationBounds,
    stability: &StabilityConfig,
) -> Result<(Vec<RobotTrajectory>, RefineReport), RefineError> {
    let mut report = RefineReport::default();
    if budget.target_count == 0 {
        return Ok((Vec::new(), report));
    }
    if nominals.is_empty() {
        return Err(RefineError::InvalidInput("no nominal trajectories".into()));
    }
    let model = sim.model();
    bounds.validate(model.dof_count())?;
    let mut order: Vec<&RobotTrajectory> = nominals.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));

    let mut accepted: Vec<(String, u64, RobotTrajectory)> = Vec::new();
    for nominal in order {
        if nominal.object != object.name {
            return Err(RefineError::InvalidInput(format!("`{}` is not a {} trajectory", nominal.id, object.name)));
        }
        if nominal.actions.is_empty() {
            return Err(RefineError::InvalidInput(format!("`{}` has no actions", nominal.id)));
        }
        let mut stats = NominalStats {
            id: nominal.id.clone(),
            ..NominalStats::default()
        };
        for j in 0..budget.max_samples {
            if stats.accepted >= budget.per_nominal {
                break;
            }
            let seed = derive_seed(budget.seed, id_hash(&nominal.id), j as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (t, p) = sample_perturbation(bounds, &mut rng);
            let mut cand = apply_perturbation(model, nominal, &p);
            stats.samples += 1;
            let cfg = StabilityConfig { seed, ..stability.clone() };
            let outcome = match stability_check(sim, object, *cand.initial_object_pose(), cand.start(), &cand.actions, &cfg) {
                Ok(o) => o,
                Err(SimError::InvalidSetup(_) | SimError::NumericalBlowup { .. }) => {
                    stats.invalid += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            if !outcome.stable {
                continue;
            }
            cand.id = format!("{}/r{j}", nominal.id);
            cand.stage = Stage::Refined;
            cand.provenance.parent = Some(nominal.id.clone());
            cand.provenance.seed = Some(seed);
            cand.provenance.t = Some(t);
            cand.provenance.physics = Some(outcome.params[0]);
            cand.provenance.stability_draws = Some(outcome.draws.len());
            cand.provenance.template = None;
            let out = replay(sim, object, &cand, &stability.checks)?;
            cand.provenance.verified = out.success;
            attach_replay(&mut cand, &out);
            stats.accepted += 1;
            accepted.push((nominal.id.clone(), seed, cand));
        }
        report.samples += stats.samples;
        report.accepted += stats.accepted;
        report.nominals.push(stats);
    }
    accepted.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    report.truncated = accepted.len().saturating_sub(budget.target_count);
    accepted.truncate(budget.target_count);
    Ok((accepted.into_iter().map(|(_, _, t)| t).collect(), report))
}
