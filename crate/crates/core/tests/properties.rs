use proptest::prelude::*;

use mqreid_core::inference::{rank_fused, FeatureRecord, Fusion, Gallery, QueryFeatures};
use mqreid_core::io::{features_from_cache, features_to_cache, features_to_jsonl, quantize, read_features, write_features};
use mqreid_core::metrics::{average_precision, cgm, cmc_at_k, csp, inp, JudgedItem, ViewpointSimilarity};
use mqreid_core::nn::l2_normalize;
use mqreid_core::Viewpoint;

fn unit_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d)
        .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(|v| l2_normalize(&v).unwrap())
}

fn records(da: usize, dv: usize) -> impl Strategy<Value = Vec<FeatureRecord>> {
    prop::collection::vec(
        ("[a-z0-9_-]{1,8}", 0usize..5, 0usize..4, 0usize..3, unit_vec(da), unit_vec(dv)),
        1..12,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (id, v, c, view, a, vp))| FeatureRecord {
                record_id: format!("{id}-{i}"),
                vehicle_id: format!("v{v}"),
                camera_id: format!("c{c}"),
                viewpoint: Viewpoint::ALL[view],
                appearance: a,
                viewpoint_feature: vp,
            })
            .collect()
    })
}

fn quantized(rs: &[FeatureRecord]) -> Vec<FeatureRecord> {
    rs.iter()
        .map(|r| FeatureRecord {
            appearance: quantize(&r.appearance),
            viewpoint_feature: quantize(&r.viewpoint_feature),
            ..r.clone()
        })
        .collect()
}

#[derive(Debug, Clone)]
struct Owned {
    positive: bool,
    camera: String,
    feature: Vec<f64>,
}

fn ranked_list() -> impl Strategy<Value = Vec<Owned>> {
    prop::collection::vec((any::<bool>(), 0usize..4, prop::collection::vec(-1.0f64..1.0, 2)), 0..30).prop_map(|v| {
        v.into_iter()
            .map(|(positive, c, feature)| Owned { positive, camera: format!("c{c}"), feature })
            .collect()
    })
}

fn judged(list: &[Owned]) -> Vec<JudgedItem<'_>> {
    list.iter()
        .map(|o| JudgedItem {
            positive: o.positive,
            camera_id: &o.camera,
            viewpoint: Viewpoint::Front,
            viewpoint_feature: &o.feature,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_files_round_trip(rs in records(5, 3)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        write_features(&path, &rs).unwrap();
        let back = read_features(&path).unwrap();
        prop_assert_eq!(&back, &quantized(&rs));
        // a second write of what was read is byte-identical
        prop_assert_eq!(features_to_jsonl(&back).unwrap(), std::fs::read_to_string(&path).unwrap());
        let cached = features_from_cache(&features_to_cache(&rs).unwrap()).unwrap();
        prop_assert_eq!(cached, back);
    }

    #[test]
    fn list_metrics_stay_in_range(list in ranked_list(), eps in 0.1f64..1.5) {
        let items = judged(&list);
        let any_positive = list.iter().any(|o| o.positive);
        for v in [average_precision(&items), inp(&items), cgm(&items), csp(&items, eps, ViewpointSimilarity::Feature)] {
            prop_assert_eq!(v.is_some(), any_positive);
            if let Some(v) = v {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        let cmc: Vec<f64> = (1..=31).map(|k| cmc_at_k(&items, k).unwrap()).collect();
        prop_assert!(cmc.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn trailing_negatives_do_not_change_precision(list in ranked_list(), extra in 1usize..5) {
        let mut longer = list;
        let base: Vec<Option<f64>> = {
            let items = judged(&longer);
            vec![average_precision(&items), inp(&items), cgm(&items), csp(&items, 0.5, ViewpointSimilarity::Feature)]
        };
        for _ in 0..extra {
            longer.push(Owned { positive: false, camera: "c9".into(), feature: vec![0.0, 0.0] });
        }
        let items = judged(&longer);
        let after = vec![average_precision(&items), inp(&items), cgm(&items), csp(&items, 0.5, ViewpointSimilarity::Feature)];
        prop_assert_eq!(base, after);
    }

    #[test]
    fn distinct_positives_are_never_suppressed(list in ranked_list()) {
        // with every positive on its own camera there is nothing to merge
        let mut list = list;
        for (i, o) in list.iter_mut().enumerate() {
            o.camera = format!("own{i}");
        }
        let items = judged(&list);
        prop_assert_eq!(csp(&items, 1.5, ViewpointSimilarity::Feature), average_precision(&items));
        prop_assert_eq!(cgm(&items), average_precision(&items));
    }

    #[test]
    fn fused_ranking_is_a_sorted_permutation(
        gallery in records(4, 3),
        queries in prop::collection::vec((unit_vec(4), unit_vec(3)), 1..4),
        fusion in prop_oneof![Just(Fusion::WeightedSum), Just(Fusion::FusedCosine)],
    ) {
        let g = Gallery::new(gallery).unwrap();
        let q: Vec<QueryFeatures> = queries
            .into_iter()
            .map(|(appearance, viewpoint)| QueryFeatures { appearance, viewpoint })
            .collect();
        let admitted: Vec<usize> = (0..g.len()).collect();
        let ranked = rank_fused(&q, &g, &admitted, fusion).unwrap();
        let mut seen = ranked.indices.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, admitted);
        prop_assert!(ranked.scores.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(ranked.scores.iter().all(|s| s.abs() <= 1.0 + 1e-12));
    }
}
