mod common;

use common::{tiny_eval, tiny_model, tiny_train};
use proxyrca::data::{generate_synthetic, InteractionDataset, SynthConfig};
use proxyrca::encoder::EncoderKind;
use proxyrca::eval::{growth_experiment, removal_experiment, ExperimentSetup};
use proxyrca::train::TrainConfig;

fn corpus() -> InteractionDataset {
    generate_synthetic(
        &SynthConfig {
            user_count: 40,
            item_count: 40,
            cluster_count: 4,
            attribute_dim: 4,
            min_interactions: 8,
            max_interactions: 12,
            ..SynthConfig::default()
        },
        3,
    )
    .unwrap()
}

fn setup() -> ExperimentSetup {
    ExperimentSetup {
        model: tiny_model(),
        train: TrainConfig {
            epochs: 2,
            ..tiny_train()
        },
        eval: tiny_eval(),
        seed: 5,
    }
}

#[test]
fn removal_shrinks_the_baseline_but_not_the_proxy_encoder() {
    let ds = corpus();
    let ratios = [0.0, 0.5, 0.9];
    let base = removal_experiment(&ds, &ratios, EncoderKind::FullTable, &setup()).unwrap();
    assert!(base.iter().all(|r| r.encoder == EncoderKind::Unknown));
    assert!(base.windows(2).all(|w| w[1].param_count < w[0].param_count));
    let pir = removal_experiment(&ds, &ratios, EncoderKind::Pir, &setup()).unwrap();
    assert!(pir.iter().all(|r| r.param_count == pir[0].param_count));
    for r in base.iter().chain(&pir) {
        assert!((0.0..=1.0).contains(&r.ndcg) && (0.0..=1.0).contains(&r.diversity));
    }
}

#[test]
fn zero_removal_is_the_plain_table() {
    let ds = corpus();
    let s = setup();
    let wrapped = removal_experiment(&ds, &[0.0], EncoderKind::FullTable, &s).unwrap();
    let mut m = proxyrca::model::Model::for_dataset(
        &proxyrca::model::ModelConfig {
            encoder: EncoderKind::FullTable,
            ..s.model.clone()
        },
        &ds,
        s.seed,
    )
    .unwrap();
    proxyrca::train::fit(&mut m, &ds, &s.train, &s.eval, s.seed).unwrap();
    let report = proxyrca::eval::evaluate(&m, &ds, proxyrca::eval::Split::Test, &s.eval, s.seed).unwrap();
    assert_eq!(wrapped[0].param_count, m.param_count());
    assert_eq!(wrapped[0].ndcg, report.ndcg_at(10));
}

#[test]
fn growth_grows_only_the_baseline() {
    let ds = corpus();
    let rows = growth_experiment(&ds, 4, &[1, 2, 3, 4], &setup()).unwrap();
    let base: Vec<_> = rows.iter().filter(|r| r.encoder == EncoderKind::FullTable).collect();
    let pir: Vec<_> = rows.iter().filter(|r| r.encoder == EncoderKind::Pir).collect();
    assert_eq!(base.len(), 4);
    assert!(base.windows(2).all(|w| w[1].param_count > w[0].param_count));
    assert!(pir.iter().all(|r| r.param_count == pir[0].param_count));
    assert_eq!(base.iter().map(|r| r.items).collect::<Vec<_>>(), vec![10, 20, 30, 40]);
}

#[test]
fn full_partition_matches_the_full_run() {
    let ds = corpus();
    let s = setup();
    let grown = growth_experiment(&ds, 4, &[4], &s).unwrap();
    let mut again = growth_experiment(&ds, 1, &[1], &s).unwrap();
    again.iter_mut().for_each(|r| r.r = 4);
    assert_eq!(grown, again);
    let removal = removal_experiment(&ds, &[0.0], EncoderKind::Pir, &s).unwrap();
    let pir = grown.iter().find(|r| r.encoder == EncoderKind::Pir).unwrap();
    assert_eq!(pir.ndcg.to_bits(), removal[0].ndcg.to_bits());
}
