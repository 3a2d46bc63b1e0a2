//! Retargeting human keypoint trajectories onto a robot hand.
//!
//! Each frame minimizes `w_f·d_f + w_obj·d_obj + w_r·d_r` over the palm pose
//! and joint angles:
//!
//! - `d_f = Σ ‖r_i(q) − s_r·r̂_i‖²` over displacement vectors between paired
//!   keypoints,
//! - `d_obj = ‖o(f_r) − o(f_h)‖` over stacked object-center-to-fingertip
//!   vectors,
//! - `d_r` = geodesic angle between the robot palm and the human palm.

mod nelder_mead;
mod trajectory;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use nelder_mead::{minimize, NmOptions, NmResult, NonFinite};
pub use trajectory::{HumanDemo, ObservedFrame, Provenance, RobotTrajectory, Stage, TrajFrame};

use crate::geometry::{geodesic_distance, Rotation, SE3Pose, Vec3};
use crate::kinematics::{human_keypoint_index, HandModel, HandState, HumanFrame, JointConfig, ModelError};

#[derive(Debug, Error)]
pub enum RetargetError {
    #[error("missing keypoint `{0}`")]
    MissingKeypoint(String),
    #[error("fingertip count mismatch: robot {robot}, human {human}")]
    LengthMismatch { robot: usize, human: usize },
    #[error("invalid retarget config: {0}")]
    InvalidConfig(String),
    #[error("invalid human frame: {0}")]
    InvalidFrame(String),
    #[error("non-finite cost at iterate {iterate:?}")]
    Numerical { iterate: Vec<f64> },
    #[error("empty demonstration")]
    EmptyDemo,
    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<RetargetError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Displacement `[from, to]` on the human hand matched to one on the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointPair {
    pub human: [String; 2],
    pub robot: [String; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TipPair {
    pub human: String,
    pub robot: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerMethod {
    /// Palm block, then one block per finger chain, repeated; then a full polish.
    BlockNelderMead,
    /// Nelder-Mead over all variables at once.
    NelderMead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: OptimizerMethod,
    /// Iteration cap per simplex run.
    pub max_iters: usize,
    /// Relative cost tolerance.
    pub tolerance: f64,
    /// Restarts of the full polish from the incumbent.
    pub restarts: usize,
    /// Block coordinate-descent sweeps.
    pub sweeps: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: OptimizerMethod::BlockNelderMead,
            max_iters: 400,
            tolerance: 1e-10,
            restarts: 2,
            sweeps: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetargetConfig {
    pub w_f: f64,
    pub w_obj: f64,
    pub w_r: f64,
    /// Robot-to-human size ratio.
    pub s_r: f64,
    pub keypoint_pairs: Vec<KeypointPair>,
    pub fingertip_pairs: Vec<TipPair>,
    pub optimizer: OptimizerConfig,
}

/// Robot finger name and the human finger it follows, for the bundled hand.
const FOUR_FINGER_MAP: [(&str, &str, &str, &str); 4] = [
    ("index", "index", "index_mcp", "index_pip"),
    ("middle", "middle", "middle_mcp", "middle_pip"),
    ("ring", "ring", "ring_mcp", "ring_pip"),
    ("thumb", "thumb", "thumb_mcp", "thumb_ip"),
];

impl Default for RetargetConfig {
    /// Defaults for the bundled four-finger hand: per finger, base->tip and
    /// mid->tip displacements, and fingertip correspondences.
    fn default() -> Self {
        let mut keypoint_pairs = Vec::new();
        let mut fingertip_pairs = Vec::new();
        for (robot, human, h_base, h_mid) in FOUR_FINGER_MAP {
            let h_tip = format!("{human}_tip");
            let r_tip = format!("{robot}_tip");
            keypoint_pairs.push(KeypointPair {
                human: [h_base.to_string(), h_tip.clone()],
                robot: [format!("{robot}_base"), r_tip.clone()],
            });
            keypoint_pairs.push(KeypointPair {
                human: [h_mid.to_string(), h_tip.clone()],
                robot: [format!("{robot}_mid"), r_tip.clone()],
            });
            fingertip_pairs.push(TipPair {
                human: h_tip,
                robot: r_tip,
            });
        }
        Self {
            w_f: 1.0,
            w_obj: 1.0,
            w_r: 0.5,
            s_r: 1.6,
            keypoint_pairs,
            fingertip_pairs,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl RetargetConfig {
    pub fn validate(&self) -> Result<(), RetargetError> {
        let bad = |m: &str| Err(RetargetError::InvalidConfig(m.to_string()));
        for (name, w) in [("w_f", self.w_f), ("w_obj", self.w_obj), ("w_r", self.w_r)] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(&format!("{name} must be a finite non-negative weight"));
            }
        }
        if self.w_f + self.w_obj + self.w_r <= 0.0 {
            return bad("weights are all zero");
        }
        if !(self.s_r > 0.0 && self.s_r.is_finite()) {
            return bad("s_r must be positive");
        }
        if self.w_f > 0.0 && self.keypoint_pairs.is_empty() {
            return bad("w_f > 0 needs keypoint pairs");
        }
        if self.w_obj > 0.0 && self.fingertip_pairs.is_empty() {
            return bad("w_obj > 0 needs fingertip pairs");
        }
        Ok(())
    }

    /// Scales the three weights by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            w_f: self.w_f * lambda,
            w_obj: self.w_obj * lambda,
            w_r: self.w_r * lambda,
            ..self.clone()
        }
    }
}

fn lookup<'a>(map: &'a BTreeMap<String, Vec3>, name: &str) -> Result<&'a Vec3, RetargetError> {
    map.get(name).ok_or_else(|| RetargetError::MissingKeypoint(name.to_string()))
}

/// Finger term: `Σ ‖r_i − s_r·r̂_i‖²` over the configured displacement pairs.
pub fn cost_df(
    robot_kp: &BTreeMap<String, Vec3>,
    human_kp: &BTreeMap<String, Vec3>,
    cfg: &RetargetConfig,
) -> Result<f64, RetargetError> {
    let mut total = 0.0;
    for pair in &cfg.keypoint_pairs {
        let r = lookup(robot_kp, &pair.robot[1])? - lookup(robot_kp, &pair.robot[0])?;
        let h = lookup(human_kp, &pair.human[1])? - lookup(human_kp, &pair.human[0])?;
        total += (r - h * cfg.s_r).norm_squared();
    }
    Ok(total)
}

/// Object term: L2 norm of the stacked center-to-tip displacement differences.
pub fn cost_dobj(robot_tips: &[Vec3], human_tips: &[Vec3], object_center: &Vec3) -> Result<f64, RetargetError> {
    if robot_tips.len() != human_tips.len() {
        return Err(RetargetError::LengthMismatch {
            robot: robot_tips.len(),
            human: human_tips.len(),
        });
    }
    let sq: f64 = robot_tips
        .iter()
        .zip(human_tips)
        .map(|(r, h)| ((r - object_center) - (h - object_center)).norm_squared())
        .sum();
    Ok(sq.sqrt())
}

/// Palm orientation term.
pub fn cost_dr(robot_palm: &Rotation, human_palm: &Rotation) -> f64 {
    geodesic_distance(robot_palm, human_palm)
}

/// Human keypoints of a frame by landmark name.
pub fn human_keypoint_map(frame: &HumanFrame) -> BTreeMap<String, Vec3> {
    crate::kinematics::HUMAN_KEYPOINT_NAMES
        .iter()
        .zip(&frame.keypoints)
        .map(|(n, p)| (n.to_string(), *p))
        .collect()
}

/// Per-frame retargeting problem with names resolved to indices.
struct FrameProblem<'a> {
    model: &'a HandModel,
    cfg: &'a RetargetConfig,
    /// Robot keypoint index pairs and scaled human targets.
    pairs: Vec<(usize, usize, Vec3)>,
    robot_tips: Vec<usize>,
    human_tips: Vec<Vec3>,
    center: Vec3,
    human_palm: Rotation,
    /// The palm rotation chart is centered here.
    chart_rotation: Rotation,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl<'a> FrameProblem<'a> {
    fn new(model: &'a HandModel, frame: &HumanFrame, cfg: &'a RetargetConfig, chart_rotation: Rotation) -> Result<Self, RetargetError> {
        let human = |name: &str| -> Result<Vec3, RetargetError> {
            human_keypoint_index(name)
                .and_then(|i| frame.keypoints.get(i).copied())
                .ok_or_else(|| RetargetError::MissingKeypoint(name.to_string()))
        };
        let robot = |name: &str| model.keypoint_index(name).ok_or_else(|| RetargetError::MissingKeypoint(name.to_string()));
        let mut pairs = Vec::new();
        for p in &cfg.keypoint_pairs {
            let h = human(&p.human[1])? - human(&p.human[0])?;
            pairs.push((robot(&p.robot[0])?, robot(&p.robot[1])?, h * cfg.s_r));
        }
        let mut robot_tips = Vec::new();
        let mut human_tips = Vec::new();
        for t in &cfg.fingertip_pairs {
            robot_tips.push(robot(&t.robot)?);
            human_tips.push(human(&t.human)?);
        }
        Ok(Self {
            model,
            cfg,
            pairs,
            robot_tips,
            human_tips,
            center: frame.object_pose.translation,
            human_palm: frame.palm_orientation,
            chart_rotation,
            lower: model.lower_limits(),
            upper: model.upper_limits(),
        })
    }

    fn state(&self, x: &[f64]) -> HandState {
        let rot = self
            .chart_rotation
            .compose(&Rotation::from_rotation_vector(&Vec3::new(x[3], x[4], x[5])))
            .renormalized();
        HandState::new(
            SE3Pose::new(Vec3::new(x[0], x[1], x[2]), rot),
            JointConfig::new(x[6..].to_vec()),
        )
    }

    fn encode(&self, state: &HandState) -> Vec<f64> {
        let t = state.palm_pose.translation;
        let w = self.chart_rotation.inverse().compose(&state.palm_pose.rotation).to_rotation_vector();
        let mut x = vec![t.x, t.y, t.z, w.x, w.y, w.z];
        x.extend(state.joints.angles.iter().zip(&self.lower).zip(&self.upper).map(|((a, l), u)| a.clamp(*l, *u)));
        x
    }

    fn project(&self, x: &mut [f64]) {
        for ((v, l), u) in x[6..].iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    fn cost(&self, x: &[f64]) -> f64 {
        let state = self.state(x);
        let kps = match self.model.keypoint_positions(&state) {
            Ok(k) => k,
            Err(_) => return f64::NAN,
        };
        let mut total = 0.0;
        if self.cfg.w_f > 0.0 {
            let df: f64 = self
                .pairs
                .iter()
                .map(|(a, b, h)| ((kps[*b] - kps[*a]) - h).norm_squared())
                .sum();
            total += self.cfg.w_f * df;
        }
        if self.cfg.w_obj > 0.0 {
            let sq: f64 = self
                .robot_tips
                .iter()
                .zip(&self.human_tips)
                .map(|(r, h)| ((kps[*r] - self.center) - (h - self.center)).norm_squared())
                .sum();
            total += self.cfg.w_obj * sq.sqrt();
        }
        if self.cfg.w_r > 0.0 {
            total += self.cfg.w_r * geodesic_distance(&state.palm_pose.rotation, &self.human_palm);
        }
        total
    }

    /// One block per fingertip chain, leftover joints, then the palm.
    fn blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut assigned = vec![false; self.model.dof_count()];
        for &tip in &self.robot_tips {
            let chain: Vec<usize> = self
                .model
                .keypoint_chain(tip)
                .iter()
                .copied()
                .filter(|&j| !assigned[j])
                .collect();
            for &j in &chain {
                assigned[j] = true;
            }
            if !chain.is_empty() {
                blocks.push(chain.iter().map(|j| 6 + j).collect());
            }
        }
        let rest: Vec<usize> = (0..assigned.len()).filter(|&j| !assigned[j]).map(|j| 6 + j).collect();
        if !rest.is_empty() {
            blocks.push(rest);
        }
        blocks.push((0..6).collect());
        blocks
    }

    fn step_sizes(&self, scale: f64) -> Vec<f64> {
        let mut s = vec![0.01 * scale; 3];
        s.extend([0.05 * scale; 3]);
        s.extend(std::iter::repeat_n(0.1 * scale, self.model.dof_count()));
        s
    }
}

/// Best point on a 3-level grid over the joints of `block`, others fixed.
fn grid_seed(problem: &FrameProblem, x: &[f64], block: &[usize]) -> Option<(Vec<f64>, f64)> {
    const LEVELS: [f64; 3] = [0.15, 0.5, 0.85];
    if block.len() > 5 {
        return None;
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut trial = x.to_vec();
    for code in 0..LEVELS.len().pow(block.len() as u32) {
        let mut c = code;
        for &i in block {
            let (lo, hi) = (problem.lower[i - 6], problem.upper[i - 6]);
            trial[i] = lo + (hi - lo) * LEVELS[c % LEVELS.len()];
            c /= LEVELS.len();
        }
        let f = problem.cost(&trial);
        if f.is_finite() && best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((trial.clone(), f));
        }
    }
    best
}

/// Result of retargeting one frame.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub state: HandState,
    pub cost: f64,
    /// Best cost after every optimizer iteration (non-increasing).
    pub log: Vec<f64>,
}

/// Initial guess without a warm start: human palm orientation and joints at
/// zero (clamped). Palm-fixed robot keypoints that start a displacement
/// ending at a matched fingertip have an implied target
/// `tip − s_r·r̂`; the palm is translated onto their mean. Without such
/// anchors, fingertip centroids are aligned instead.
fn cold_start(model: &HandModel, problem: &FrameProblem, frame: &HumanFrame) -> HandState {
    let joints = model.clamp_to_limits(&JointConfig::zeros(model.dof_count()));
    let rot = frame.palm_orientation;
    let at = |j: JointConfig| model.keypoint_positions(&HandState::new(SE3Pose::from_rotation(rot), j)).expect("dof matches");
    let kps = at(joints.clone());
    let lo = at(JointConfig::new(model.lower_limits()));
    let hi = at(JointConfig::new(model.upper_limits()));
    let fixed = |i: usize| (kps[i] - lo[i]).norm() < 1e-9 && (kps[i] - hi[i]).norm() < 1e-9;

    let mut offset = Vec3::zeros();
    let mut count = 0usize;
    for (a, b, h) in &problem.pairs {
        let Some(k) = problem.robot_tips.iter().position(|t| t == b) else { continue };
        if fixed(*a) {
            offset += problem.human_tips[k] - h - kps[*a];
            count += 1;
        }
    }
    let translation = if count > 0 {
        offset / count as f64
    } else if !problem.robot_tips.is_empty() {
        let n = problem.robot_tips.len() as f64;
        let robot_c: Vec3 = problem.robot_tips.iter().map(|&i| kps[i]).sum::<Vec3>() / n;
        let human_c: Vec3 = problem.human_tips.iter().sum::<Vec3>() / n;
        human_c - robot_c
    } else {
        frame.keypoints[0]
    };
    HandState::new(SE3Pose::new(translation, rot), joints)
}

/// Minimizes the weighted cost for one frame. With a warm start the
/// returned cost never exceeds the warm start's cost.
pub fn retarget_frame(
    model: &HandModel,
    frame: &HumanFrame,
    cfg: &RetargetConfig,
    warm_start: Option<&HandState>,
) -> Result<FrameResult, RetargetError> {
    cfg.validate()?;
    if !frame.is_valid() {
        return Err(RetargetError::InvalidFrame("expected 21 finite keypoints".into()));
    }
    if let Some(w) = warm_start {
        if w.joints.len() != model.dof_count() {
            return Err(ModelError::DofMismatch {
                expected: model.dof_count(),
                got: w.joints.len(),
            }
            .into());
        }
    }
    // The warm start (when given) and the anchored cold start are both
    // optimized; the lower final cost wins.
    let mut log = Vec::new();
    let cold = FrameProblem::new(model, frame, cfg, frame.palm_orientation)?;
    let cold_x = cold.encode(&cold_start(model, &cold, frame));
    let mut best = optimize(&cold, cold_x, &cfg.optimizer, &mut log)?;
    let mut state = cold.state(&best.0);
    if let Some(w) = warm_start {
        let warm = FrameProblem::new(model, frame, cfg, w.palm_pose.rotation)?;
        let mut warm_log = Vec::new();
        let r = optimize(&warm, warm.encode(w), &cfg.optimizer, &mut warm_log)?;
        // Report the warm run first so the log starts at the warm-start cost.
        warm_log.extend(log);
        log = warm_log;
        if r.1 <= best.1 {
            state = warm.state(&r.0);
            best = r;
        }
    }
    let mut running = f64::INFINITY;
    for v in log.iter_mut() {
        running = running.min(*v);
        *v = running;
    }
    Ok(FrameResult {
        state,
        cost: best.1,
        log,
    })
}

/// Block coordinate descent followed by a full seeded polish. Returns the
/// best iterate and its cost; every improvement is appended to `log`.
fn optimize(problem: &FrameProblem, mut x: Vec<f64>, opt: &OptimizerConfig, log: &mut Vec<f64>) -> Result<(Vec<f64>, f64), RetargetError> {
    problem.project(&mut x);
    let mut fx = problem.cost(&x);
    if !fx.is_finite() {
        return Err(RetargetError::Numerical { iterate: x });
    }
    log.push(fx);
    let nm = NmOptions {
        max_iters: opt.max_iters,
        tolerance: opt.tolerance,
        x_tolerance: 1e-9,
    };
    let numerical = |e: NonFinite| RetargetError::Numerical { iterate: e.iterate };

    if opt.method == OptimizerMethod::BlockNelderMead {
        let blocks = problem.blocks();
        let steps = problem.step_sizes(1.0);
        for sweep in 0..opt.sweeps {
            let before = fx;
            for (b, block) in blocks.iter().enumerate() {
                if sweep == 0 && b + 1 < blocks.len() {
                    // Finger chains have mirrored local minima; seed from a coarse grid.
                    if let Some((gx, gf)) = grid_seed(problem, &x, block) {
                        if gf < fx {
                            x = gx;
                            fx = gf;
                            log.push(fx);
                        }
                    }
                }
                let base = x.clone();
                let sub0: Vec<f64> = block.iter().map(|&i| x[i]).collect();
                let sub_step: Vec<f64> = block.iter().map(|&i| steps[i]).collect();
                let embed = |sub: &[f64]| {
                    let mut full = base.clone();
                    for (k, &i) in block.iter().enumerate() {
                        full[i] = sub[k];
                    }
                    full
                };
                let mut f = |sub: &[f64]| problem.cost(&embed(sub));
                let project = |sub: &mut [f64]| {
                    let mut full = embed(sub);
                    problem.project(&mut full);
                    for (k, &i) in block.iter().enumerate() {
                        sub[k] = full[i];
                    }
                };
                let r = minimize(&mut f, &project, &sub0, &sub_step, &nm, None, log).map_err(|e| {
                    numerical(NonFinite {
                        iterate: embed(&e.iterate),
                    })
                })?;
                if r.f < fx {
                    x = embed(&r.x);
                    fx = r.f;
                }
            }
            if before - fx <= opt.tolerance * before.abs() + 1e-15 {
                break;
            }
        }
    }

    // Full polish with shrinking, seeded simplexes.
    let polish = NmOptions {
        max_iters: opt.max_iters * 4,
        ..nm
    };
    for r in 0..=opt.restarts {
        let scale = 0.5f64.powi(r as i32 + if opt.method == OptimizerMethod::BlockNelderMead { 1 } else { 0 });
        let steps = problem.step_sizes(scale);
        let seed = opt.seed.wrapping_mul(0x9e37_79b9).wrapping_add(r as u64);
        let mut f = |v: &[f64]| problem.cost(v);
        let res = minimize(&mut f, &|v| problem.project(v), &x, &steps, &polish, Some(seed), log).map_err(numerical)?;
        if res.f < fx {
            x = res.x;
            fx = res.f;
        }
    }
    Ok((x, fx))
}

/// Retargets every frame, warm-starting each from its predecessor.
pub fn retarget_trajectory(model: &HandModel, demo: &HumanDemo, cfg: &RetargetConfig) -> Result<RobotTrajectory, RetargetError> {
    if demo.frames.is_empty() {
        return Err(RetargetError::EmptyDemo);
    }
    let mut states: Vec<HandState> = Vec::with_capacity(demo.frames.len());
    for (index, frame) in demo.frames.iter().enumerate() {
        let r = retarget_frame(model, frame, cfg, states.last()).map_err(|e| RetargetError::Frame {
            index,
            source: Box::new(e),
        })?;
        states.push(r.state);
    }
    let poses: Vec<SE3Pose> = demo.frames.iter().map(|f| f.object_pose).collect();
    let start = states[0].clone();
    let actions = states[1..].to_vec();
    Ok(RobotTrajectory::from_plan(
        demo.id.clone(),
        demo.id.clone(),
        demo.object.clone(),
        Stage::Retargeted,
        start,
        actions,
        &poses,
    ))
}
