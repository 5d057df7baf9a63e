use sfa_core::eval::{evaluate, fit_depth_probe};
use sfa_core::fusion::FusionConfig;
use sfa_core::model::{cfg_combine, Model, ModelSpec};
use sfa_core::synth::{make_dataset, SampleSource, SynthConfig, SyntheticDataset};
use sfa_core::trainer::{freeze_check, train_style_path, TrainConfig};

#[test]
fn training_improves_held_out_style_alignment() {
    let data = SyntheticDataset::new(SynthConfig::default()).unwrap();
    let model = Model::seeded(&ModelSpec::default()).unwrap();
    let fusion = FusionConfig::default();
    let state = train_style_path(&model, &data, &TrainConfig::default(), &fusion).unwrap();
    assert!(freeze_check(&state));
    let trained = state.model().unwrap();
    assert_eq!(trained.frozen, model.frozen);

    let fit: Vec<_> = (0..6).map(|i| data.sample(i).unwrap()).collect();
    let probe = fit_depth_probe(&fit).unwrap();
    let held: Vec<_> = (0..6).map(|k| data.held_out_sample(k, k).unwrap()).collect();
    let align = |m: &Model| {
        evaluate(m, &held, &fusion, &probe)
            .unwrap()
            .report("style_alignment")
            .unwrap()
            .aggregate
    };
    let (before, after) = (align(&model), align(&trained));
    assert!(after > before, "held-out alignment {before} -> {after}");
}

#[test]
fn unit_guidance_without_dropout_is_the_conditional_output() {
    let data = make_dataset(4, 2, 4, 1).unwrap();
    let model = Model::seeded(&ModelSpec::default()).unwrap();
    let fusion = FusionConfig::default();
    let cfg = TrainConfig {
        steps: 10,
        views_per_batch: 4,
        cfg_dropout_prob: 0.0,
        ..TrainConfig::default()
    };
    let trained = train_style_path(&model, &data, &cfg, &fusion).unwrap().model().unwrap();
    let s = data.sample(0).unwrap();
    let cond = trained.fuse(&s.content_views, &s.style_views, &fusion).unwrap().features;
    let uncond = trained.fuse_unconditional(&s.content_views, &fusion).unwrap().features;
    assert_eq!(cfg_combine(&uncond, &cond, 1.0).unwrap(), cond);
}
