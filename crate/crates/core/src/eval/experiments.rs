use serde::{Deserialize, Serialize};

use super::{evaluate, EvalConfig, Split};
use crate::data::InteractionDataset;
use crate::encoder::EncoderKind;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::train::{fit, TrainConfig};

/// Everything needed to train and evaluate one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSetup {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalRow {
    pub encoder: EncoderKind,
    pub ratio: f64,
    pub param_count: usize,
    pub encoder_param_count: usize,
    pub ndcg: f64,
    pub diversity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub r: usize,
    pub encoder: EncoderKind,
    pub items: usize,
    pub param_count: usize,
    pub encoder_param_count: usize,
    pub ndcg: f64,
}

fn train_and_test(dataset: &InteractionDataset, model: &ModelConfig, setup: &ExperimentSetup) -> Result<(Model, f64, f64)> {
    let mut m = Model::for_dataset(model, dataset, setup.seed)?;
    fit(&mut m, dataset, &setup.train, &setup.eval, setup.seed)?;
    let report = evaluate(&m, dataset, Split::Test, &setup.eval, setup.seed)?;
    Ok((m, report.ndcg_at(10), report.diversity))
}

/// Trains one model per removal ratio. Baseline encoders collapse the
/// least frequent items onto a shared unknown row; the proxy encoder only
/// withholds frequent-item biases from them.
pub fn removal_experiment(
    dataset: &InteractionDataset,
    ratios: &[f64],
    encoder: EncoderKind,
    setup: &ExperimentSetup,
) -> Result<Vec<RemovalRow>> {
    let kind = match encoder {
        EncoderKind::FullTable | EncoderKind::Unknown => EncoderKind::Unknown,
        EncoderKind::Pir => EncoderKind::Pir,
    };
    ratios
        .iter()
        .map(|&ratio| {
            let cfg = ModelConfig {
                encoder: kind,
                removal_ratio: ratio,
                ..setup.model.clone()
            };
            let (m, ndcg, diversity) = train_and_test(dataset, &cfg, setup)?;
            Ok(RemovalRow {
                encoder: kind,
                ratio,
                param_count: m.param_count(),
                encoder_param_count: m.encoder_param_count(),
                ndcg,
                diversity,
            })
        })
        .collect()
}

/// Truncates the catalog to `r / partitions` of its items for each `r` and
/// trains both the full-table baseline and the proxy encoder.
pub fn growth_experiment(
    dataset: &InteractionDataset,
    partitions: usize,
    rs: &[usize],
    setup: &ExperimentSetup,
) -> Result<Vec<GrowthRow>> {
    let mut rows = Vec::new();
    for &r in rs {
        if r == 0 || r > partitions {
            return Err(Error::Config(format!("partition {r} outside 1..={partitions}")));
        }
        let items = r * dataset.item_count() / partitions;
        let part = dataset.truncate_catalog(items)?;
        for encoder in [EncoderKind::FullTable, EncoderKind::Pir] {
            let cfg = ModelConfig {
                encoder,
                ..setup.model.clone()
            };
            let (m, ndcg, _) = train_and_test(&part, &cfg, setup)?;
            rows.push(GrowthRow {
                r,
                encoder,
                items,
                param_count: m.param_count(),
                encoder_param_count: m.encoder_param_count(),
                ndcg,
            });
        }
    }
    Ok(rows)
}
