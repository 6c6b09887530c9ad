use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use occlusion_core::eval::{miou_by_level, MaskMode, PredictedObject, ScenePrediction};
use occlusion_core::format::{feature_map_bytes, load_feature_map, load_model, model_bytes};
use occlusion_core::learning::{estimate_coeffs, learn_occluder, TrainedModel};
use occlusion_core::model::LogPdfCache;
use occlusion_core::oracle::{check_competition, random_instance, RandomInstance};
use occlusion_core::orm::{
    compete, recover_order, reassign, segment_scene, OccMerge, OrmConfig, Owner, VisibilityAssignment,
};
use occlusion_core::synth::{generate_challenge, ChallengeConfig, ChallengeWorld, GeneratedScene, WorldConfig};
use occlusion_core::tensor::{BinaryMask, FeatureMap};

fn instance(seed: u64, side: usize, objects: usize) -> RandomInstance {
    random_instance(&mut ChaCha8Rng::seed_from_u64(seed), side, objects).unwrap()
}

fn scenes() -> &'static [GeneratedScene] {
    static SCENES: OnceLock<Vec<GeneratedScene>> = OnceLock::new();
    SCENES.get_or_init(|| {
        let world = ChallengeWorld::new(WorldConfig::default()).unwrap();
        let config = ChallengeConfig {
            train_per_level: 0,
            test_per_level: 1,
            ..ChallengeConfig::desk(3)
        };
        generate_challenge(&world, &config).unwrap()
    })
}

fn flip(m: &BinaryMask, rng: &mut ChaCha8Rng) -> BinaryMask {
    let mut m = m.clone();
    for _ in 0..rng.random_range(0..40) {
        let (r, c) = (rng.random_range(0..m.height()), rng.random_range(0..m.width()));
        let v = m.get(r, c);
        m.set(r, c, !v);
    }
    m
}

/// Ground-truth masks with a few flipped cells; some objects go missing.
fn noisy_predictions(seed: u64) -> Vec<ScenePrediction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for s in scenes() {
        let mut objects = Vec::new();
        for o in &s.truth.objects {
            if rng.random_bool(0.1) {
                continue;
            }
            objects.push(PredictedObject {
                id: o.id,
                class: o.class,
                modal: flip(o.modal(), &mut rng),
                amodal: flip(o.amodal(), &mut rng),
            });
        }
        out.push(ScenePrediction {
            objects,
            graph: s.truth.order.clone(),
        });
    }
    out
}

fn candidates() -> impl Strategy<Value = Vec<(usize, f64, f64)>> {
    prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..5)
        .prop_map(|v| v.into_iter().enumerate().map(|(i, (f, o))| (i, f, o)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compete_ignores_a_common_offset(c in candidates(), shift in -1e3f64..1e3, per_object in any::<bool>()) {
        // quantized so the shift is exact in f64
        let q = |x: f64| (x * 64.0).round() / 64.0;
        let base: Vec<_> = c.iter().map(|&(i, f, o)| (i, q(f), q(o))).collect();
        let shifted: Vec<_> = base.iter().map(|&(i, f, o)| (i, f + q(shift), o + q(shift))).collect();
        let merge = if per_object { OccMerge::PerObject } else { OccMerge::Max };
        prop_assert_eq!(compete(&base, merge), compete(&shifted, merge));
    }

    #[test]
    fn order_is_antisymmetric_except_ties(a in 0usize..50, b in 0usize..50) {
        let (ab, ba) = (recover_order(a, b), recover_order(b, a));
        if a == b {
            prop_assert_eq!((ab, ba), (-1, -1));
        } else {
            prop_assert_eq!(ab, -ba);
        }
    }

    #[test]
    fn reassignment_leaves_one_owner_per_conflict_cell(
        seed in any::<u64>(),
        h in 1usize..8,
        w in 1usize..8,
        front in 0usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut own = VisibilityAssignment::new(h, w);
        let bits = (0..h * w).map(|_| rng.random_bool(0.5)).collect();
        let conflict = BinaryMask::from_bits(h, w, bits).unwrap();
        for r in 0..h {
            for c in 0..w {
                let o = match rng.random_range(0..5) {
                    0 => Owner::None,
                    1 => Owner::Outlier,
                    n => Owner::Object(n - 2),
                };
                own.set(r, c, o);
            }
        }
        let before = own.clone();
        reassign(&mut own, front, &conflict);
        for r in 0..h {
            for c in 0..w {
                let expect = if conflict.get(r, c) && before.get(r, c) != Owner::Outlier {
                    Owner::Object(front)
                } else {
                    before.get(r, c)
                };
                prop_assert_eq!(own.get(r, c), expect);
            }
        }
    }

    #[test]
    fn segmentation_invariants(seed in any::<u64>(), iters in 0usize..3, use_order in any::<bool>()) {
        let inst = instance(seed, 8, 4);
        let cache = LogPdfCache::new(&inst.map, &inst.dict, &inst.beta).unwrap();
        let cfg = OrmConfig { iters, use_order, ..OrmConfig::default() };
        let r = segment_scene(&cache, &inst.boxes, &inst.models, &cfg).unwrap();
        for o in &r.objects {
            prop_assert!(o.modal().is_subset_of(o.amodal()));
        }
        for (i, owner) in r.ownership.owners().iter().enumerate() {
            if let Owner::Object(n) = owner {
                let (row, col) = (i / inst.map.width(), i % inst.map.width());
                prop_assert!(inst.boxes[*n].contains(row as i64, col as i64));
            }
        }
        // one more pass extends the trace without rewriting it
        let more = segment_scene(&cache, &inst.boxes, &inst.models, &OrmConfig { iters: iters + 1, ..cfg }).unwrap();
        prop_assert_eq!(&more.trace[..iters], &r.trace[..]);
    }

    #[test]
    fn learned_simplices_sum_to_one(seed in any::<u64>(), crops in 1usize..5, smoothing in 0.0f64..3.0) {
        let inst = instance(seed, 6, 1);
        let maps: Vec<FeatureMap> = (0..crops)
            .map(|i| instance(seed.wrapping_add(i as u64 + 1), 6, 1).map)
            .map(|m| FeatureMap::new(2, 2, 4, m.raw().iter().cycle().take(16).copied().collect()).unwrap())
            .collect();
        for row in estimate_coeffs(&maps, &inst.dict, None, smoothing).unwrap() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let beta = learn_occluder(&inst.map.vectors().collect::<Vec<_>>(), &inst.dict).unwrap();
        prop_assert!((beta.coeffs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn feature_map_round_trip(seed in any::<u64>()) {
        let map = instance(seed, 8, 1).map;
        let back = load_feature_map(&feature_map_bytes(&map)).unwrap();
        prop_assert_eq!(feature_map_bytes(&back), feature_map_bytes(&map));
        prop_assert_eq!(back, map);
    }

    #[test]
    fn model_round_trip(seed in any::<u64>()) {
        let inst = instance(seed, 4, 4);
        let model = TrainedModel { dictionary: inst.dict, classes: inst.models, occluder: inst.beta };
        let bytes = model_bytes(&model).unwrap();
        let back = load_model(&bytes).unwrap();
        prop_assert_eq!(model_bytes(&back).unwrap(), bytes);
        prop_assert_eq!(back, model);
    }

    #[test]
    fn competition_matches_enumeration(seed in any::<u64>()) {
        let s = check_competition(8, seed).unwrap();
        prop_assert!(s.passed(), "{}", s.line());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_ignore_scene_order(seed in any::<u64>(), rotate in 0usize..12, amodal in any::<bool>()) {
        let mode = if amodal { MaskMode::Amodal } else { MaskMode::Modal };
        let preds = noisy_predictions(seed);
        let truths: Vec<_> = scenes().iter().map(|s| s.truth.clone()).collect();
        let table = miou_by_level(&preds, &truths, mode).unwrap();

        let k = rotate % preds.len();
        let (mut p2, mut t2) = (preds.clone(), truths.clone());
        p2.rotate_left(k);
        t2.rotate_left(k);
        p2.reverse();
        t2.reverse();
        let again = miou_by_level(&p2, &t2, mode).unwrap();
        prop_assert_eq!(table.mean.count, again.mean.count);
        prop_assert!((table.mean().unwrap() - again.mean().unwrap()).abs() < 1e-9);
        for (level, b) in &table.levels {
            prop_assert_eq!(b.count, again.levels[level].count);
            prop_assert!((b.sum - again.levels[level].sum).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_is_count_weighted_level_average(seed in any::<u64>()) {
        let preds = noisy_predictions(seed);
        let truths: Vec<_> = scenes().iter().map(|s| s.truth.clone()).collect();
        let table = miou_by_level(&preds, &truths, MaskMode::Modal).unwrap();
        let total: usize = table.levels.values().map(|b| b.count).sum();
        let weighted: f64 = table
            .levels
            .values()
            .map(|b| b.miou().unwrap() * b.count as f64)
            .sum::<f64>()
            / total as f64;
        prop_assert_eq!(total, table.mean.count);
        prop_assert!((weighted - table.mean().unwrap()).abs() < 1e-9);
    }
}
