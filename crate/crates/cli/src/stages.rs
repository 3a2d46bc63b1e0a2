//! Stage implementations. Every stage is a pure function of the config and
//! its upstream artifacts, so reruns reproduce byte-identical outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dexgrasp::dataset::{render_stats, stats as dataset_stats, to_canonical_json, DatasetHeader, DemoRef, GraspDataset};
use dexgrasp::fixtures::{synthetic_demos, upright_pose};
use dexgrasp::kinematics::HandModel;
use dexgrasp::policy::{
    evaluate, train as train_policy, EvalReport, HeuristicPolicy, MlpPolicy, NearestNeighborPolicy, TrainLog,
};
use dexgrasp::refine::{
    augment_translation, derive_seed, funnel as funnel_one, refine as refine_nominals, template_targets, AugmentReport, FunnelError,
    PerturbationBounds, RefineReport,
};
use dexgrasp::retarget::{retarget_trajectory, HumanDemo, RobotTrajectory, Stage as TrajStage};
use dexgrasp::sim::Simulator;

use crate::artifacts::*;
use crate::{CliError, PipelineConfig};

/// Subcommands that run one pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Retarget,
    Template,
    Refine,
    Augment,
    Funnel,
    Train,
    Eval,
    Stats,
}

impl Stage {
    pub const ORDER: [Stage; 8] = [
        Stage::Retarget,
        Stage::Template,
        Stage::Refine,
        Stage::Augment,
        Stage::Funnel,
        Stage::Train,
        Stage::Eval,
        Stage::Stats,
    ];
}

pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<(), CliError> {
    match stage {
        Stage::Retarget => retarget(cfg),
        Stage::Template => template(cfg),
        Stage::Refine => refine(cfg),
        Stage::Augment => augment(cfg),
        Stage::Funnel => funnel(cfg),
        Stage::Train => train(cfg),
        Stage::Eval => eval(cfg),
        Stage::Stats => stats(cfg, None).map(|_| ()),
    }
}

/// All stages in dataset-generation order, then training, evaluation and stats.
pub fn pipeline(cfg: &PipelineConfig) -> Result<(), CliError> {
    for stage in Stage::ORDER {
        run_stage(cfg, stage)?;
    }
    Ok(())
}

/// Structured report wrapper carrying the audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport<T> {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub report: T,
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    model: HandModel,
    sim: Simulator,
    hash: String,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a PipelineConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let model = cfg.hand()?;
        let sim = Simulator::new(model.clone(), cfg.sim.clone());
        std::fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))?;
        Ok(Self {
            cfg,
            model,
            sim,
            hash: cfg.hash(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn header(&self, demos: Vec<DemoRef>) -> DatasetHeader {
        DatasetHeader {
            seed: Some(self.cfg.seed),
            config_hash: Some(self.hash.clone()),
            ..DatasetHeader::new(&self.model, self.cfg.objects.clone(), demos)
        }
    }

    /// Reads an upstream dataset, naming the stage that produces it if absent.
    fn read(&self, name: &str, producer: &'static str) -> Result<GraspDataset, CliError> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(CliError::MissingArtifact { path, stage: producer });
        }
        let ds = GraspDataset::read(&path).map_err(|e| CliError::io(&path, e))?;
        ds.check_model(&self.model).map_err(|e| CliError::io(&path, e))?;
        Ok(ds)
    }

    fn write_dataset(&self, name: &str, human: Vec<HumanDemo>, demos: Vec<DemoRef>, trajectories: Vec<RobotTrajectory>) -> Result<(), CliError> {
        let mut ds = GraspDataset::new(self.header(demos));
        ds.human_demos = human;
        ds.trajectories = trajectories;
        let path = self.path(name);
        ds.write(&path).map_err(|e| CliError::io(&path, e))?;
        info!("wrote {} ({} trajectories)", path.display(), ds.trajectories.len());
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, stage: &str, report: T) -> Result<(), CliError> {
        let wrapped = StageReport {
            stage: stage.into(),
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            report,
        };
        let mut bytes = to_canonical_json(&wrapped).map_err(|e| CliError::Other(e.to_string()))?;
        bytes.push(b'\n');
        write_file(&self.path(name), &bytes)
    }

    fn write_text(&self, name: &str, body: &str) -> Result<(), CliError> {
        let text = format!("# config {} seed {}\n{body}", self.hash, self.cfg.seed);
        write_file(&self.path(name), text.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn demo_refs(demos: &[HumanDemo]) -> Vec<DemoRef> {
    demos
        .iter()
        .map(|d| DemoRef {
            id: d.id.clone(),
            object: d.object.clone(),
        })
        .collect()
}

/// Loads the configured demo file, or generates the synthetic set and
/// writes it next to the other artifacts.
fn load_demos(ctx: &Ctx) -> Result<Vec<HumanDemo>, CliError> {
    let cfg = ctx.cfg;
    let demos = match &cfg.demos {
        Some(path) => {
            let ds = GraspDataset::read(path).map_err(|e| CliError::Config(format!("`demos`: {e}")))?;
            ds.human_demos
        }
        None => {
            let demos = synthetic_demos(&ctx.sim, &cfg.objects, cfg.synthetic.per_object, cfg.synthetic.s_r, cfg.synth_seed());
            ctx.write_dataset(DEMOS, demos.clone(), demo_refs(&demos), Vec::new())?;
            demos
        }
    };
    if demos.is_empty() {
        return Err(CliError::Config("`demos`: no human demonstrations".into()));
    }
    for d in &demos {
        if cfg.object(&d.object).is_none() {
            return Err(CliError::Config(format!("demo `{}` uses unknown object `{}`", d.id, d.object)));
        }
    }
    Ok(demos)
}

pub fn synth_demos(cfg: &PipelineConfig) -> Result<PathBuf, CliError> {
    let ctx = Ctx::new(cfg)?;
    let demos = synthetic_demos(&ctx.sim, &cfg.objects, cfg.synthetic.per_object, cfg.synthetic.s_r, cfg.synth_seed());
    ctx.write_dataset(DEMOS, demos.clone(), demo_refs(&demos), Vec::new())?;
    Ok(ctx.path(DEMOS))
}

pub fn retarget(cfg: &PipelineConfig) -> Result<(), CliError> {
    let ctx = Ctx::new(cfg)?;
    let demos = load_demos(&ctx)?;
    let mut out = Vec::with_capacity(demos.len());
    for d in &demos {
        let t = retarget_trajectory(&ctx.model, d, &cfg.retarget).map_err(|e| CliError::from(e).context(&d.id))?;
        out.push(t);
    }
    let refs = demo_refs(&demos);
    ctx.write_dataset(RETARGETED, demos, refs, out)
}

pub fn template(cfg: &PipelineConfig) -> Result<(), CliError> {
    let ctx = Ctx::new(cfg)?;
    let up = ctx.read(RETARGETED, "retarget")?;
    let out = template_targets(&up.trajectories, &cfg.template)?;
    ctx.write_dataset(TEMPLATED, Vec::new(), up.header.human_demos, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport<T> {
    pub object: String,
    pub report: T,
}

pub fn refine(cfg: &PipelineConfig) -> Result<(), CliError> {
    let ctx = Ctx::new(cfg)?;
    let up = ctx.read(TEMPLATED, "template")?;
    let bounds = cfg.refine.bounds.clone().unwrap_or_else(|| PerturbationBounds::default_for(ctx.model.dof_count()));
    let budget = cfg.refine_budget();
    let mut out = Vec::new();
    let mut reports = Vec::new();
    for object in &cfg.objects {
        let nominals: Vec<RobotTrajectory> = up.trajectories.iter().filter(|t| t.object == object.name).cloned().collect();
        let (list, report) = if nominals.is_empty() {
            (Vec::new(), RefineReport::default())
        } else {
            refine_nominals(&ctx.sim, &nominals, object, &budget, &bounds, &cfg.refine.stability)?
        };
        info!("refine {}: {} of {} samples accepted", object.name, report.accepted, report.samples);
        out.extend(list);
        reports.push(ObjectReport {
            object: object.name.clone(),
            report,
        });
    }
    ctx.write_json(REFINE_REPORT, "refine", reports)?;
    ctx.write_dataset(REFINED, Vec::new(), up.header.human_demos, out)
}

pub fn augment(cfg: &PipelineConfig) -> Result<(), CliError> {
    let ctx = Ctx::new(cfg)?;
    let up = ctx.read(REFINED, "refine")?;
    let acfg = cfg.augment_config();
    let mut out = Vec::new();
    let mut reports = Vec::new();
    for object in &cfg.objects {
        let parents: Vec<RobotTrajectory> = up.trajectories.iter().filter(|t| t.object == object.name).cloned().collect();
        let (list, report) = augment_translation(&ctx.sim, &parents, object, &acfg)?;
        info!("augment {}: {} of {} offsets retained", object.name, report.retained, report.proposed);
        out.extend(list);
        reports.push(ObjectReport::<AugmentReport> {
            object: object.name.clone(),
            report,
        });
    }
    ctx.write_json(AUGMENT_REPORT, "augment", reports)?;
    ctx.write_dataset(AUGMENTED, Vec::new(), up.header.human_demos, out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FunnelReport {
    pub proposed: usize,
    pub retained: usize,
    pub infeasible: usize,
}

/// Funnels random initial hands into the refined and augmented pool, then
/// writes the final dataset: human demos plus every verified trajectory.
pub fn funnel(cfg: &PipelineConfig) -> Result<(), CliError> {
    let ctx = Ctx::new(cfg)?;
    let refined = ctx.read(REFINED, "refine")?;
    let augmented = ctx.read(AUGMENTED, "augment")?;
    let retargeted = ctx.read(RETARGETED, "retarget")?;
    let fs = &cfg.funnel;
    let mut out = Vec::new();
    let mut reports = Vec::new();
    for (k, object) in cfg.objects.iter().enumerate() {
        let pool: Vec<RobotTrajectory> = refined
            .trajectories
            .iter()
            .chain(&augmented.trajectories)
            .filter(|t| t.object == object.name)
            .cloned()
            .collect();
        let mut report = FunnelReport::default();
        if !pool.is_empty() {
            for i in 0..fs.per_object {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.funnel_seed(k), i as u64, 0));
                let xy = fs.object_xy;
                let (x, y) = if xy > 0.0 { (rng.random_range(-xy..=xy), rng.random_range(-xy..=xy)) } else { (0.0, 0.0) };
                let center = upright_pose(object, x, y, 0.0).translation;
                let hand = fs.hands.sample(&ctx.model, &center, &mut rng);
                report.proposed += 1;
                match funnel_one(&ctx.sim, object, &hand, &pool, &fs.config) {
                    Ok(mut t) => {
                        let parent = t.provenance.parent.clone().unwrap_or_default();
                        t.id = format!("{parent}/f{i}");
                        report.retained += 1;
                        out.push(t);
                    }
                    Err(FunnelError::NoFeasiblePrefix { .. }) => report.infeasible += 1,
                    Err(e) => return Err(e.into()),
                }
            }
        }
        info!("funnel {}: {} of {} retained", object.name, report.retained, report.proposed);
        reports.push(ObjectReport {
            object: object.name.clone(),
            report,
        });
    }
    ctx.write_json(FUNNEL_REPORT, "funnel", reports)?;
    let demos = refined.header.human_demos.clone();
    ctx.write_dataset(FUNNELED, Vec::new(), demos.clone(), out.clone())?;
    let mut all = refined.trajectories;
    all.extend(augmented.trajectories);
    all.extend(out);
    ctx.write_dataset(DATASET, retargeted.human_demos, demos, all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub object: String,
    pub trajectories: usize,
    pub log: TrainLog,
}

pub fn train(cfg: &PipelineConfig) -> Result<(), CliError> {
    let ctx = Ctx::new(cfg)?;
    let ds = ctx.read(DATASET, "funnel")?;
    let name = &cfg.train.object;
    let object = cfg.object(name).expect("validated").clone();
    let data: Vec<RobotTrajectory> = ds
        .trajectories
        .into_iter()
        .filter(|t| &t.object == name && !matches!(t.stage, TrajStage::Retargeted | TrajStage::Templated))
        .filter(|t| cfg.train.funneled || t.stage != TrajStage::Funneled)
        .collect();
    if data.is_empty() {
        return Err(CliError::Other(format!("no verified `{name}` trajectories to train on")));
    }
    let (mut policy, log) = train_policy(&ctx.model, &data, &[object], &cfg.train_config())?;
    info!("train {name}: loss {:.4} -> {:.4}", log.initial_loss, log.final_loss());
    policy.config_hash = Some(ctx.hash.clone());
    let path = ctx.path(POLICY);
    policy.save(&path).map_err(|e| CliError::io(&path, e))?;
    ctx.write_json(
        TRAIN_REPORT,
        "train",
        TrainSummary {
            object: name.clone(),
            trajectories: data.len(),
            log,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub object: String,
    pub policy: EvalReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heuristic: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nearest_neighbor: Option<EvalReport>,
}

impl EvalSummary {
    /// Success within 1..=k attempts, one row per controller.
    pub fn table(&self) -> String {
        let mut rows = vec![("policy", &self.policy)];
        rows.extend(self.heuristic.as_ref().map(|r| ("heuristic", r)));
        rows.extend(self.nearest_neighbor.as_ref().map(|r| ("nearest-neighbor", r)));
        let attempts = self.policy.attempts;
        let mut out = format!("{:<18}", self.object);
        for k in 1..=attempts {
            out.push_str(&format!(" {:>6}", format!("{k}-try")));
        }
        out.push('\n');
        for (name, r) in rows {
            out.push_str(&format!("{name:<18}"));
            for k in 1..=attempts {
                out.push_str(&format!(" {:>6.2}", r.rate(k)));
            }
            out.push('\n');
        }
        out
    }
}

pub fn eval(cfg: &PipelineConfig) -> Result<(), CliError> {
    let ctx = Ctx::new(cfg)?;
    let path = ctx.path(POLICY);
    if !path.is_file() {
        return Err(CliError::MissingArtifact { path, stage: "train" });
    }
    let mut policy = MlpPolicy::load(&path).map_err(|e| CliError::io(&path, e))?;
    if policy.hand_model_hash != ctx.model.content_hash() {
        return Err(CliError::Config(format!("{}: trained for a different hand model", path.display())));
    }
    let name = cfg.train.object.clone();
    let object = cfg.object(&name).expect("validated").clone();
    let ecfg = cfg.eval_config();
    let report = evaluate(&mut policy, &ctx.sim, &object, &ecfg);
    let (heuristic, nearest_neighbor) = if cfg.eval.baselines {
        let ds = ctx.read(DATASET, "funnel")?;
        let train: Vec<RobotTrajectory> = ds.trajectories.into_iter().filter(|t| t.object == name).collect();
        let h = evaluate(&mut HeuristicPolicy::new(cfg.eval.heuristic.clone()), &ctx.sim, &object, &ecfg);
        let nn = evaluate(&mut NearestNeighborPolicy::new(train, cfg.funnel.config.weights), &ctx.sim, &object, &ecfg);
        (Some(h), Some(nn))
    } else {
        (None, None)
    };
    let summary = EvalSummary {
        object: name,
        policy: report,
        heuristic,
        nearest_neighbor,
    };
    ctx.write_text(EVAL_TABLE, &summary.table())?;
    print!("{}", summary.table());
    ctx.write_json(EVAL_REPORT, "eval", summary)
}

/// Counts over one dataset file, or over every stage artifact present in the
/// output directory. Writes `stats.txt` in the latter case.
pub fn stats(cfg: &PipelineConfig, dataset: Option<&Path>) -> Result<String, CliError> {
    if let Some(path) = dataset {
        if !path.is_file() {
            return Err(CliError::Config(format!("{} does not exist", path.display())));
        }
        let ds = GraspDataset::read(path).map_err(|e| CliError::io(path, e))?;
        let table = render_stats(&dataset_stats(&ds));
        print!("{table}");
        return Ok(table);
    }
    let ctx = Ctx::new(cfg)?;
    let mut merged: Option<GraspDataset> = None;
    let mut by_id = BTreeMap::new();
    for name in [RETARGETED, TEMPLATED, REFINED, AUGMENTED, FUNNELED] {
        let path = ctx.path(name);
        if !path.is_file() {
            continue;
        }
        let ds = ctx.read(name, "retarget")?;
        for t in &ds.trajectories {
            by_id.insert(t.id.clone(), t.clone());
        }
        merged.get_or_insert(ds);
    }
    let Some(mut ds) = merged else {
        return Err(CliError::MissingArtifact {
            path: ctx.path(RETARGETED),
            stage: "retarget",
        });
    };
    ds.human_demos.clear();
    ds.trajectories = by_id.into_values().collect();
    let table = render_stats(&dataset_stats(&ds));
    ctx.write_text(STATS, &table)?;
    print!("{table}");
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_upstream_names_the_producer() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            out_dir: dir.path().to_path_buf(),
            ..PipelineConfig::default()
        };
        for (stage, producer) in [
            (Stage::Template, "retarget"),
            (Stage::Refine, "template"),
            (Stage::Augment, "refine"),
            (Stage::Funnel, "refine"),
            (Stage::Train, "funnel"),
            (Stage::Eval, "train"),
            (Stage::Stats, "retarget"),
        ] {
            match run_stage(&cfg, stage) {
                Err(CliError::MissingArtifact { stage, .. }) => assert_eq!(stage, producer),
                other => panic!("{stage:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn eval_without_a_policy_says_run_train_first() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            out_dir: dir.path().to_path_buf(),
            ..PipelineConfig::default()
        };
        let err = eval(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("run train first"), "{err}");
    }

    #[test]
    fn summary_table_lists_every_attempt() {
        let r = EvalReport {
            episodes: 4,
            attempts: 3,
            rates: vec![0.25, 0.5, 0.5],
            drops: 1,
            results: Vec::new(),
        };
        let s = EvalSummary {
            object: "box".into(),
            policy: r.clone(),
            heuristic: Some(r),
            nearest_neighbor: None,
        };
        let t = s.table();
        assert_eq!(t.lines().count(), 3);
        assert!(t.lines().nth(1).unwrap().ends_with("0.25   0.50   0.50"));
    }
}
