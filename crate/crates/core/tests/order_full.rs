use calli_core::orderformer::{
    evaluate_order, order_sample, predict_reading_order, rule_baseline, train, OrderTrainConfig,
};
use calli_core::preprocess::ClusterParams;
use calli_core::synthgen::{gen_pages, GenConfig};

/// The default training run: 5000 generated pages, 200 epochs. Hours on one core.
#[test]
#[ignore]
fn default_config_beats_baseline() {
    let params = ClusterParams::default();
    let pages = gen_pages(&GenConfig::default()).unwrap();
    let samples: Vec<_> = pages.iter().filter_map(|p| order_sample(p, &params).ok()).collect();
    let outcome = train(&samples, &OrderTrainConfig::default(), |e| {
        eprintln!("epoch {} loss {:.5}", e.epoch, e.loss);
    })
    .unwrap();
    let held_out = gen_pages(&GenConfig {
        count: 500,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let model = evaluate_order(&held_out, |p| predict_reading_order(p, &outcome.model, &params)).unwrap();
    let base = evaluate_order(&held_out, |p| rule_baseline(p, &params)).unwrap();
    eprintln!("model {:.4} baseline {:.4}", model.exact_accuracy, base.exact_accuracy);
    assert!(model.exact_accuracy >= 0.90);
    assert!(model.exact_accuracy >= base.exact_accuracy);
}
