//! Supervised training on verified trajectories.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kinematics::HandModel;
use crate::retarget::{ObservedFrame, RobotTrajectory};
use crate::sim::{offset_actions, ObjectSpec};

use super::features::{featurize, FeatureConfig, FeatureVector};
use super::loss::{packed_loss_and_gradient, LossWeights};
use super::network::{Adam, Architecture, Network, Normalizer};
use super::{MlpPolicy, PolicyError, PolicyOutput, CHECKPOINT_FORMAT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Width of the shared per-point map.
    pub point_features: usize,
    pub weights: LossWeights,
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 460,
            learning_rate: 2e-4,
            epochs: 60,
            seed: 0,
            hidden: vec![256, 256, 128],
            point_features: 32,
            // Per-step palm translations are millimetres; unit weight lets
            // the policy lift far too slowly.
            weights: LossWeights {
                translation: 30.0,
                ..LossWeights::default()
            },
            features: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || self.features.history == 0 {
            return Err(PolicyError::InvalidInput("batch size, learning rate and history must be positive".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(PolicyError::InvalidInput("hidden layer of width 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub samples: usize,
    /// Mean loss over the training set before the first update.
    pub initial_loss: f64,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

pub struct Sample {
    pub features: FeatureVector,
    /// Packed `[Δt, Δr, q]` label.
    pub target: Vec<f64>,
}

/// One sample per action. Observations come from the stored replay when
/// present (with the replay's noise offset applied to the labels), else from
/// the planned frames with no contacts.
pub fn trajectory_samples(model: &HandModel, cfg: &FeatureConfig, traj: &RobotTrajectory, object: &ObjectSpec) -> Result<Vec<Sample>, PolicyError> {
    let tips = model.fingertip_indices().len();
    let (frames, executed) = if traj.observed.is_empty() {
        let frames: Vec<ObservedFrame> = traj
            .frames
            .iter()
            .map(|f| ObservedFrame {
                hand: f.hand.clone(),
                object_pose: f.object_pose,
                contacts: vec![false; tips],
            })
            .collect();
        (frames, traj.actions.clone())
    } else {
        let offset = traj.provenance.physics.map(|p| p.noise_offset()).unwrap_or_default();
        (traj.observed.clone(), offset_actions(&traj.actions, &offset))
    };
    if frames.len() < executed.len() {
        return Err(PolicyError::InvalidInput(format!("`{}` has fewer observations than actions", traj.id)));
    }
    executed
        .iter()
        .enumerate()
        .map(|(t, a)| {
            Ok(Sample {
                features: featurize(model, cfg, &frames[..=t], object)?,
                target: PolicyOutput::from_target(&frames[t].hand, a).pack(),
            })
        })
        .collect()
}

/// Mean loss over a batch and its parameter gradient.
pub fn batch_loss_and_gradient(net: &Network, params: &[f64], batch: &[&Sample], weights: &LossWeights) -> (f64, Vec<f64>) {
    let feats: Vec<&FeatureVector> = batch.iter().map(|s| &s.features).collect();
    let fwd = net.forward_with(params, &feats);
    let n = batch.len() as f64;
    let mut d_out = DMatrix::zeros(fwd.outputs.nrows(), batch.len());
    let mut total = 0.0;
    for (j, s) in batch.iter().enumerate() {
        let pred: Vec<f64> = fwd.outputs.column(j).iter().copied().collect();
        let (l, g) = packed_loss_and_gradient(&pred, &s.target, weights);
        total += l;
        for (i, v) in g.iter().enumerate() {
            d_out[(i, j)] = v / n;
        }
    }
    (total / n, net.backward_with(params, &fwd, &d_out))
}

fn mean_loss(net: &Network, samples: &[Sample], weights: &LossWeights) -> f64 {
    let mut total = 0.0;
    for chunk in samples.chunks(1024) {
        let feats: Vec<&FeatureVector> = chunk.iter().map(|s| &s.features).collect();
        let out = net.forward(&feats).outputs;
        for (j, s) in chunk.iter().enumerate() {
            let pred: Vec<f64> = out.column(j).iter().copied().collect();
            total += packed_loss_and_gradient(&pred, &s.target, weights).0;
        }
    }
    total / samples.len().max(1) as f64
}

/// Fits a policy to every action of the given trajectories. Deterministic
/// per seed: initialization and minibatch order both derive from it.
pub fn train(model: &HandModel, trajectories: &[RobotTrajectory], objects: &[ObjectSpec], cfg: &TrainConfig) -> Result<(MlpPolicy, TrainLog), PolicyError> {
    cfg.validate()?;
    if trajectories.is_empty() {
        return Err(PolicyError::InvalidInput("no trajectories to train on".into()));
    }
    let mut samples = Vec::new();
    for t in trajectories {
        let object = objects
            .iter()
            .find(|o| o.name == t.object)
            .ok_or_else(|| PolicyError::InvalidInput(format!("unknown object `{}`", t.object)))?;
        samples.extend(trajectory_samples(model, &cfg.features, t, object)?);
    }
    if samples.is_empty() {
        return Err(PolicyError::InvalidInput("trajectories have no actions".into()));
    }
    let arch = Architecture {
        flat_inputs: cfg.features.flat_len(model),
        point_features: if cfg.features.surface_points > 0 { cfg.point_features } else { 0 },
        hidden: cfg.hidden.clone(),
        dof: model.dof_count(),
    };
    let mut net = Network::new(arch.clone(), cfg.seed);
    let feats: Vec<FeatureVector> = samples.iter().map(|s| s.features.clone()).collect();
    let targets: Vec<Vec<f64>> = samples.iter().map(|s| s.target.clone()).collect();
    net.norm = Normalizer::fit(&arch, &feats, &targets);
    drop(feats);

    let mut log = TrainLog {
        samples: samples.len(),
        initial_loss: mean_loss(&net, &samples, &cfg.weights),
        epoch_losses: Vec::with_capacity(cfg.epochs),
    };
    let mut opt = Adam::new(net.params.len(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let (l, g) = batch_loss_and_gradient(&net, &net.params, &batch, &cfg.weights);
            opt.step(&mut net.params, &g);
            sum += l * batch.len() as f64;
        }
        if !sum.is_finite() {
            return Err(PolicyError::NonFinite(format!("epoch {} loss", log.epoch_losses.len())));
        }
        log.epoch_losses.push(sum / samples.len() as f64);
    }
    let policy = MlpPolicy {
        format: CHECKPOINT_FORMAT.into(),
        hand_model_hash: model.content_hash(),
        features: cfg.features.clone(),
        train: cfg.clone(),
        config_hash: None,
        network: net,
    };
    Ok((policy, log))
}
