use occlusion_core::eval::{miou_by_level, segment_generated, MaskMode, ScenePrediction};
use occlusion_core::format::{load_challenge, load_predictions, save_challenge, save_prediction, Manifest};
use occlusion_core::learning::{train, TrainConfig};
use occlusion_core::orm::OrmConfig;
use occlusion_core::synth::{
    generate_challenge, training_set, ChallengeConfig, ChallengeWorld, Scenario, Split, WorldConfig,
};

#[test]
fn dataset_survives_disk_and_segments() {
    let world = ChallengeWorld::new(WorldConfig::default()).unwrap();
    let config = ChallengeConfig {
        scenarios: vec![Scenario::TwoObject, Scenario::TwoPlusUnknown],
        train_per_level: 8,
        test_per_level: 2,
        seed: 11,
    };
    let scenes = generate_challenge(&world, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = Manifest::new(config.seed, world.config.clone(), world.class_labels.clone());
    let path = save_challenge(dir.path(), manifest, &scenes).unwrap();

    let (manifest, test) = load_challenge(&path, Some(Split::Test)).unwrap();
    assert_eq!(manifest.class_labels, world.class_labels);
    assert_eq!(test.len(), 2 * 4 * 2);
    for loaded in &test {
        let original = scenes.iter().find(|s| s.id == loaded.id).unwrap();
        assert_eq!(loaded.features, original.features);
        assert_eq!(loaded.truth, original.truth);
        assert_eq!(loaded.spec.scenario, original.spec.scenario);
    }

    let (_, train_scenes) = load_challenge(&path, Some(Split::Train)).unwrap();
    let cfg = TrainConfig {
        k: 24,
        m: 1,
        seed: 3,
        ..TrainConfig::default()
    };
    let model = train(&training_set(&world, &train_scenes), &cfg).unwrap().model;

    let labels: Vec<String> = model.classes.iter().map(|c| c.label.clone()).collect();
    let pred_dir = dir.path().join("pred");
    std::fs::create_dir_all(&pred_dir).unwrap();
    let mut direct = Vec::new();
    for s in &test {
        let r = segment_generated(s, &model, &OrmConfig::default()).unwrap();
        save_prediction(&pred_dir, &s.id, &r, &labels).unwrap();
        direct.push((s.id.clone(), ScenePrediction::from(&r)));
    }
    let loaded = load_predictions(&pred_dir).unwrap();
    assert_eq!(loaded.len(), test.len());
    for (id, p) in &direct {
        assert_eq!(&loaded[id], p);
    }

    let truths: Vec<_> = test.iter().map(|s| s.truth.clone()).collect();
    let preds: Vec<_> = direct.into_iter().map(|(_, p)| p).collect();
    let table = miou_by_level(&preds, &truths, MaskMode::Amodal).unwrap();
    assert!(table.mean().unwrap() > 50.0, "{:?}", table);
}
