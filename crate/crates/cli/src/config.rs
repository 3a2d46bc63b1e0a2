//! Pipeline configuration document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dexgrasp::dataset::content_hash;
use dexgrasp::fixtures::standard_objects;
use dexgrasp::kinematics::{load_hand_model, HandModel};
use dexgrasp::policy::{EvalConfig, HeuristicConfig, TrainConfig};
use dexgrasp::refine::{derive_seed, AugmentConfig, FunnelConfig, InitialHandDistribution, PerturbationBounds, RefineBudget, TemplateConfig};
use dexgrasp::retarget::RetargetConfig;
use dexgrasp::sim::{ObjectSpec, SimConfig, StabilityConfig};

use crate::CliError;

/// Synthetic demonstrations generated in place of a demo file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDemos {
    pub per_object: usize,
    /// Robot-to-human size ratio used to synthesize human keypoints.
    pub s_r: f64,
}

impl Default for SyntheticDemos {
    fn default() -> Self {
        Self { per_object: 10, s_r: 1.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineStage {
    pub budget: RefineBudget,
    /// Per-joint perturbation bounds; `null` uses the model default.
    pub bounds: Option<PerturbationBounds>,
    pub stability: StabilityConfig,
}

impl Default for RefineStage {
    fn default() -> Self {
        Self {
            budget: RefineBudget::default(),
            bounds: None,
            stability: StabilityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunnelStage {
    pub config: FunnelConfig,
    /// Initial hand states drawn per object.
    pub per_object: usize,
    pub hands: InitialHandDistribution,
    /// Hands are placed around a center uniform in `[-object_xy, object_xy]²`.
    pub object_xy: f64,
}

impl Default for FunnelStage {
    fn default() -> Self {
        Self {
            config: FunnelConfig::default(),
            per_object: 300,
            hands: InitialHandDistribution::default(),
            object_xy: 0.04,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainStage {
    /// Object whose trajectories the policy is trained on.
    pub object: String,
    /// Include funneled trajectories; `false` trains the no-funneling ablation.
    pub funneled: bool,
    pub config: TrainConfig,
}

impl Default for TrainStage {
    fn default() -> Self {
        Self {
            object: "box".into(),
            funneled: true,
            config: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalStage {
    pub config: EvalConfig,
    /// Also evaluate the heuristic and nearest-neighbor baselines.
    pub baselines: bool,
    pub heuristic: HeuristicConfig,
}

impl Default for EvalStage {
    fn default() -> Self {
        Self {
            config: EvalConfig::default(),
            baselines: true,
            heuristic: HeuristicConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Hand description file; `null` selects the bundled four-finger hand.
    pub hand_model: Option<PathBuf>,
    pub objects: Vec<ObjectSpec>,
    /// Dataset file with `human_demo` records; `null` generates `synthetic`.
    pub demos: Option<PathBuf>,
    pub synthetic: SyntheticDemos,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub sim: SimConfig,
    pub retarget: RetargetConfig,
    pub template: TemplateConfig,
    pub refine: RefineStage,
    pub augment: AugmentConfig,
    pub funnel: FunnelStage,
    pub train: TrainStage,
    pub eval: EvalStage,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            hand_model: None,
            objects: standard_objects(),
            demos: None,
            synthetic: SyntheticDemos::default(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            sim: SimConfig::default(),
            retarget: RetargetConfig::default(),
            template: TemplateConfig::default(),
            refine: RefineStage::default(),
            augment: AugmentConfig::default(),
            funnel: FunnelStage::default(),
            train: TrainStage::default(),
            eval: EvalStage::default(),
        }
    }
}

/// Stage tags mixed into the global seed.
const SEED_SYNTH: u64 = 1;
const SEED_REFINE: u64 = 2;
const SEED_AUGMENT: u64 = 3;
const SEED_FUNNEL: u64 = 4;
const SEED_TRAIN: u64 = 5;
const SEED_EVAL: u64 = 6;

impl PipelineConfig {
    /// Parses a config document. Relative paths inside it are resolved
    /// against the document's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        let mut cfg: PipelineConfig = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| CliError::Config(format!("{}: at `{}`: {}", path.display(), e.path(), e.inner())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.hand_model.as_mut().map(resolve);
        cfg.demos.as_mut().map(resolve);
        resolve(&mut cfg.out_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        for (field, p) in [("hand_model", &self.hand_model), ("demos", &self.demos)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return bad(format!("`{field}`: {} does not exist", p.display()));
                }
            }
        }
        if self.objects.is_empty() {
            return bad("`objects`: at least one object is required".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if let Err(e) = o.validate() {
                return bad(format!("`objects[{i}]`: {e}"));
            }
            if self.objects[..i].iter().any(|p| p.name == o.name) {
                return bad(format!("`objects[{i}]`: duplicate name `{}`", o.name));
            }
        }
        if self.demos.is_none() && self.synthetic.per_object == 0 {
            return bad("`synthetic.per_object` must be positive when `demos` is null".into());
        }
        self.retarget.validate().map_err(|e| CliError::Config(format!("`retarget`: {e}")))?;
        self.train.config.validate().map_err(|e| CliError::Config(format!("`train.config`: {e}")))?;
        if !self.objects.iter().any(|o| o.name == self.train.object) {
            return bad(format!("`train.object`: unknown object `{}`", self.train.object));
        }
        if self.eval.config.episodes == 0 || self.eval.config.attempts == 0 {
            return bad("`eval.config`: episodes and attempts must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical config document, excluding `out_dir` so
    /// identical runs written to different directories agree.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        content_hash(&c)
    }

    pub fn hand(&self) -> Result<HandModel, CliError> {
        match &self.hand_model {
            None => Ok(HandModel::four_finger()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                load_hand_model(&text).map_err(|e| CliError::Config(format!("`hand_model`: {e}")))
            }
        }
    }

    pub fn object(&self, name: &str) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn synth_seed(&self) -> u64 {
        derive_seed(self.seed, SEED_SYNTH, 0)
    }

    pub fn refine_budget(&self) -> RefineBudget {
        RefineBudget {
            seed: derive_seed(self.seed, SEED_REFINE, 0),
            ..self.refine.budget.clone()
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            seed: derive_seed(self.seed, SEED_AUGMENT, 0),
            ..self.augment.clone()
        }
    }

    pub fn funnel_seed(&self, object: usize) -> u64 {
        derive_seed(self.seed, SEED_FUNNEL, object as u64)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, SEED_TRAIN, 0),
            ..self.train.config.clone()
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            seed: derive_seed(self.seed, SEED_EVAL, 0),
            ..self.eval.config.clone()
        }
    }
}
