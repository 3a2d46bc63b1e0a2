//! One demo through retargeting, templating, refinement, augmentation and the store.

use dexgrasp::dataset::{stats, DatasetHeader, DemoRef, GraspDataset};
use dexgrasp::fixtures::{box_object, synthetic_demos};
use dexgrasp::refine::{augment_translation, refine, template_targets, AugmentConfig, PerturbationBounds, RefineBudget, TemplateConfig};
use dexgrasp::retarget::{retarget_trajectory, RetargetConfig, Stage};
use dexgrasp::sim::{stability_check, SimConfig, Simulator, StabilityConfig};
use dexgrasp::HandModel;

#[test]
fn one_demo_yields_verified_trajectories_that_round_trip() {
    let sim = Simulator::new(HandModel::four_finger(), SimConfig::default());
    let model = sim.model().clone();
    let obj = box_object();
    let demos = synthetic_demos(&sim, &[obj.clone()], 1, 1.6, 3);
    let retargeted: Vec<_> = demos.iter().map(|d| retarget_trajectory(&model, d, &RetargetConfig::default()).unwrap()).collect();
    let tcfg = TemplateConfig {
        yaw_step_deg: 120.0,
        use_demo_poses: false,
        ..TemplateConfig::default()
    };
    let templated = template_targets(&retargeted, &tcfg).unwrap();
    assert!(!templated.is_empty());
    let normalized = retargeted.len() + templated.len();
    assert!(templated.iter().all(|t| t.stage == Stage::Templated));

    let budget = RefineBudget {
        max_samples: 4,
        ..RefineBudget::default()
    };
    let scfg = StabilityConfig::default();
    let (refined, report) = refine(&sim, &templated, &obj, &budget, &PerturbationBounds::default_for(model.dof_count()), &scfg).unwrap();
    assert!(!refined.is_empty(), "{report:?}");
    assert!(report.accepted >= refined.len());
    for t in &refined {
        let cfg = StabilityConfig {
            seed: t.provenance.seed.unwrap(),
            ..scfg.clone()
        };
        let o = stability_check(&sim, &obj, *t.initial_object_pose(), t.start(), &t.actions, &cfg).unwrap();
        assert!(o.stable, "{}", t.id);
    }

    let (augmented, _) = augment_translation(&sim, &refined, &obj, &AugmentConfig::default()).unwrap();
    assert!(augmented.iter().all(|t| t.stage == Stage::Augmented));

    let header = DatasetHeader::new(&model, vec![obj.clone()], vec![DemoRef { id: demos[0].id.clone(), object: obj.name.clone() }]);
    let mut ds = GraspDataset::new(header);
    ds.human_demos = demos.clone();
    ds.trajectories = retargeted.into_iter().chain(templated).chain(refined.clone()).chain(augmented.clone()).collect();
    ds.validate().unwrap();
    let bytes = ds.to_bytes().unwrap();
    let back = GraspDataset::from_bytes(&bytes).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.to_bytes().unwrap(), bytes);

    let s = stats(&back);
    assert_eq!(s.total.human, 1);
    assert_eq!(s.total.normalized, normalized);
    assert_eq!(s.total.refined, refined.len());
    assert_eq!(s.total.augmented, augmented.len());
}
