use egate_core::egate::{EgateConfig, EgateModel, EgateTrainConfig, GraphShape};
use egate_core::hgraph::{encode, FeatureScheme, HGraph};
use egate_core::pauli::{build_family, Family, FamilySpec};

fn xxz_graphs(n: usize, count: usize) -> Vec<HGraph<f64>> {
    (0..count)
        .map(|k| {
            let jzz = -3.0 + 6.0 * k as f64 / (count - 1) as f64;
            let h = build_family(&FamilySpec::new(Family::Xxz1d, n, &[("Jzz", jzz)])).unwrap();
            encode(&h, &FeatureScheme::one_hot()).unwrap()
        })
        .collect()
}

#[test]
fn twenty_graph_dataset_loss_drops_tenfold() {
    let graphs = xxz_graphs(4, 20);
    let mut model = EgateModel::<f64>::new(EgateConfig::new(5, 18), GraphShape::of(&graphs[0]), 7).unwrap();
    let report = model.train(&graphs, &EgateTrainConfig::full_batch(100, 1e-3, 7)).unwrap();
    assert_eq!(report.steps, 100);
    assert!(
        report.final_loss * 10.0 <= report.initial_loss,
        "initial {} final {}",
        report.initial_loss,
        report.final_loss
    );
}

#[test]
fn training_is_deterministic() {
    let graphs = xxz_graphs(4, 6);
    let run = || {
        let mut model = EgateModel::<f64>::new(EgateConfig::new(2, 8), GraphShape::of(&graphs[0]), 3).unwrap();
        let mut cfg = EgateTrainConfig::full_batch(5, 1e-3, 9);
        cfg.batching = egate_core::egate::Batching::Size(2);
        let r = model.train(&graphs, &cfg).unwrap();
        (r, model.to_checkpoint_json())
    };
    assert_eq!(run(), run());
}
