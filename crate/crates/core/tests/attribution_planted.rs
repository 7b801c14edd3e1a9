mod common;

use common::scenarios::{self, PLANTED_FEATURES};
use regionsense::attribution::{
    activation_attribute_split, attribution_report, generalization_eval, select_best_features, top_activating,
    AttributionOptions, ClassScope, Selection,
};
use regionsense::bridge::{Bridge, BridgeOptions};
use regionsense::dataset::{AttributeId, Split};
use regionsense::saliency::IouVariant;

#[test]
fn planted_features_are_recovered_and_generalise() {
    let out = scenarios::planted_attribution();
    for (i, &(feature, train, test)) in out.recovered.iter().enumerate() {
        assert_eq!(feature, PLANTED_FEATURES[i]);
        assert!(train > 0.8, "train IOU {train}");
        assert!(test > 0.8, "test IOU {test}");
        assert!(out.unwired_test_iou[i] < test - 0.3, "unwired {} vs {test}", out.unwired_test_iou[i]);
        assert!(out.unwired_train_iou[i] < train - 0.3);
    }
    assert_eq!(out.saliency_calls, out.expected_calls);
}

#[test]
fn class_pools_and_skips() {
    let ds = scenarios::planted_dataset();
    let train = ds.filter_split(Split::Train);
    let mut bridge = Bridge::connect(scenarios::wired_backend(), BridgeOptions::default()).unwrap();
    let opts = AttributionOptions {
        k: 4,
        ..AttributionOptions::default()
    };
    let sel = select_best_features(&mut bridge, &train, ClassScope::Each, &opts).unwrap();
    let classes = train.classes().len();
    let all_attrs = AttributeId::all().count();
    assert_eq!(sel.entries.len() + sel.skipped.len(), classes * all_attrs);
    assert_eq!(sel.entries.len(), classes * 2);
    for e in &sel.entries {
        assert!(e.train_ids.len() <= 4);
        let class = e.class.unwrap();
        for id in &e.train_ids {
            let s = train.get(id).unwrap();
            assert_eq!(s.class_label, class);
            assert!(s.has_attribute(e.attribute));
        }
    }
}

#[test]
fn paper_formula_variant_is_bounded_by_half() {
    let ds = scenarios::planted_dataset();
    let train = ds.filter_split(Split::Train);
    let test = ds.filter_split(Split::Test);
    let mut bridge = Bridge::connect(scenarios::wired_backend(), BridgeOptions::default()).unwrap();
    let opts = AttributionOptions {
        iou_variant: IouVariant::PaperFormula,
        ..AttributionOptions::default()
    };
    let sel = select_best_features(&mut bridge, &train, ClassScope::All, &opts).unwrap();
    let results = generalization_eval(&mut bridge, &test, &sel, &opts).unwrap();
    for r in &results {
        assert!(r.train_mean_iou <= 0.5 && r.test_iou_mean <= 0.5);
        assert!(PLANTED_FEATURES.contains(&r.feature_index));
    }
    let report = attribution_report(&sel, &results);
    assert_eq!(report.iou_variant, IouVariant::PaperFormula);
    assert_eq!(report.pairs.len(), 2);
}

#[test]
fn generalization_rejects_an_empty_test_pool() {
    let ds = scenarios::planted_dataset();
    let train = ds.filter_split(Split::Train);
    let mut bridge = Bridge::connect(scenarios::wired_backend(), BridgeOptions::default()).unwrap();
    let opts = AttributionOptions::default();
    let sel = select_best_features(&mut bridge, &train, ClassScope::All, &opts).unwrap();
    let horns = AttributeId::from_name("horns").unwrap();
    let no_horns = ds.filter_split(Split::Test).filter(|s| !s.has_attribute(horns));
    let only_horns = Selection {
        entries: sel.entries.iter().filter(|e| e.attribute == horns).cloned().collect(),
        ..sel
    };
    assert!(generalization_eval(&mut bridge, &no_horns, &only_horns, &opts).is_err());
}

#[test]
fn activation_split_and_top_activating() {
    let ds = scenarios::planted_dataset();
    let test = ds.filter_split(Split::Test);
    let mut bridge = Bridge::connect(scenarios::directional_backend(), BridgeOptions::default()).unwrap();
    let horns = AttributeId::from_name("horns").unwrap();
    let split = activation_attribute_split(&mut bridge, &test, 3, horns).unwrap();
    assert_eq!(split.n_positive + split.n_negative, test.len());
    assert_eq!(split.positive.total(), split.n_positive);
    assert_eq!(split.negative.edges, split.positive.edges);
    assert!((0.0..=1.0).contains(&split.roc_area));

    let top = top_activating(&mut bridge, &test, 3, 5, None).unwrap();
    assert_eq!(top.len(), 5);
    let images: Vec<_> = top.iter().map(|id| &test.get(id).unwrap().image).collect();
    let acts = bridge.get_features(&images).unwrap();
    assert!(acts.features.windows(2).all(|w| w[0][3] >= w[1][3]));
    assert!(top_activating(&mut bridge, &test, 3, test.len() + 1, None).is_err());
}
