//! Subcommand implementations. Every artifact records the config hash and
//! seed it was produced with.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use proxyrca::checkpoint::Checkpoint;
use proxyrca::data::{generate_synthetic, load_dataset, DatasetStats, InteractionDataset, CONTEXT_DIM};
use proxyrca::encoder::{write_proxy_weights, EncoderKind, ItemBatch};
use proxyrca::eval::{
    evaluate, frequency_groups, growth_experiment, memorization_probe, pca_project, removal_experiment, EvalReport,
    ExperimentSetup, Split,
};
use proxyrca::model::{Model, ModelConfig};
use proxyrca::tensor::Tensor;
use proxyrca::train::{fit, History};
use proxyrca::Error;
use serde::{Deserialize, Serialize};

use crate::config::{AnalyzeTask, ExperimentConfig};
use crate::error::CliError;

pub const DATASET_FILE: &str = "dataset.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";

#[derive(Serialize, Deserialize)]
struct PreparedDataset {
    data_hash: String,
    seed: u64,
    stats: DatasetStats,
    dataset: InteractionDataset,
}

#[derive(Serialize)]
struct Stamped<'a, T> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

fn tsv_header(cfg: &ExperimentConfig, seed: u64) -> String {
    format!("# config_hash={} seed={}\n", cfg.config_hash(), seed)
}

fn out_path(cfg: &ExperimentConfig, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
    Ok(cfg.output_dir.join(name))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn label<T: Serialize>(v: T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn build_dataset(cfg: &ExperimentConfig) -> Result<InteractionDataset, CliError> {
    let ds = match (&cfg.data.synthetic, &cfg.data.interactions) {
        (Some(s), _) => generate_synthetic(s, cfg.data.seed)?,
        (None, Some(path)) => {
            let attrs = cfg.data.attributes.as_deref().map(|p| (p, cfg.data.attribute_kind));
            load_dataset(path, attrs)?
        }
        (None, None) => return Err(CliError::Input("no data source configured".into())),
    };
    Ok(ds)
}

/// Preprocesses the configured data and writes the dataset, its split,
/// item frequencies and summary statistics.
pub fn prepare(cfg: &ExperimentConfig) -> Result<DatasetStats, CliError> {
    let ds = build_dataset(cfg)?;
    let stats = ds.stats();
    let prepared = PreparedDataset {
        data_hash: cfg.data_hash(),
        seed: cfg.seed,
        stats: stats.clone(),
        dataset: ds,
    };
    let file = fs::File::create(out_path(cfg, DATASET_FILE)?)?;
    serde_json::to_writer(BufWriter::new(file), &prepared).map_err(|e| CliError::Input(e.to_string()))?;
    let ds = &prepared.dataset;
    write_json(
        &out_path(cfg, "stats.json")?,
        &Stamped {
            config_hash: &cfg.config_hash(),
            seed: cfg.seed,
            body: &stats,
        },
    )?;

    let mut freq = tsv_header(cfg, cfg.seed);
    freq.push_str("item_id\titem\ttrain_count\n");
    for (i, f) in ds.train_frequencies().iter().enumerate() {
        freq.push_str(&format!("{i}\t{}\t{f}\n", ds.item_tokens[i]));
    }
    fs::write(out_path(cfg, "frequencies.tsv")?, freq)?;

    let mut split = tsv_header(cfg, cfg.seed);
    split.push_str("user_id\tuser\ttrain_len\tvalid_item\ttest_item\n");
    for u in 0..ds.user_count() {
        let s = ds.split(u);
        let seq = &ds.sequences[u];
        split.push_str(&format!(
            "{u}\t{}\t{}\t{}\t{}\n",
            ds.user_tokens[u], s.train_len, seq[s.valid].item, seq[s.test].item
        ));
    }
    fs::write(out_path(cfg, "split.tsv")?, split)?;
    Ok(stats)
}

/// Reads the prepared dataset, refusing one built from different data settings.
pub fn load_prepared(cfg: &ExperimentConfig) -> Result<InteractionDataset, CliError> {
    let path = cfg.output_dir.join(DATASET_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Input(format!("cannot read {} ({e}); run `prepare` first", path.display())))?;
    let prepared: PreparedDataset =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if prepared.data_hash != cfg.data_hash() {
        return Err(CliError::Provenance(format!(
            "{} was prepared from different [data] settings",
            path.display()
        )));
    }
    prepared.dataset.validate()?;
    Ok(prepared.dataset)
}

fn check_model_fits(model: &ModelConfig, ds: &InteractionDataset) -> Result<(), CliError> {
    if model.encoder == EncoderKind::Pir && model.k_frequent > ds.item_count() {
        return Err(CliError::Input(format!(
            "model.k_frequent = {} exceeds the catalog of {} items",
            model.k_frequent,
            ds.item_count()
        )));
    }
    Ok(())
}

/// Ratio with the per-seed NDCG and diversity values behind a `mean` row.
type RemovalMeans = (f64, Vec<f64>, Vec<f64>);

fn numeric(cfg: &ExperimentConfig, err: Error) -> CliError {
    match err {
        Error::NumericAbort { message, diagnostics } => match out_path(cfg, DIAGNOSTICS_FILE) {
            Ok(path) => match fs::write(&path, format!("{}{message}\n{diagnostics}\n", tsv_header(cfg, cfg.seed))) {
                Ok(()) => CliError::Numeric {
                    message,
                    diagnostics: path,
                },
                Err(e) => CliError::Input(format!("{message}; could not write diagnostics: {e}")),
            },
            Err(e) => e,
        },
        other => other.into(),
    }
}

#[derive(Serialize)]
struct HistoryFile<'a> {
    config_hash: &'a str,
    seed: u64,
    history: &'a History,
}

pub struct TrainOutcome {
    pub history: History,
    pub param_count: usize,
}

/// Fits the model and writes the best checkpoint, the training history and
/// the parameter inventory.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome, CliError> {
    let ds = load_prepared(cfg)?;
    check_model_fits(&cfg.model, &ds)?;
    let hash = cfg.config_hash();
    let mut model = Model::for_dataset(&cfg.model, &ds, cfg.seed)?;
    let mut result = fit(&mut model, &ds, &cfg.train, &cfg.eval, cfg.seed).map_err(|e| numeric(cfg, e))?;
    result.best.config_hash = hash.clone();
    result.best.save(out_path(cfg, CHECKPOINT_FILE)?)?;
    write_json(
        &out_path(cfg, HISTORY_FILE)?,
        &HistoryFile {
            config_hash: &hash,
            seed: cfg.seed,
            history: &result.history,
        },
    )?;
    let mut inventory = tsv_header(cfg, cfg.seed);
    inventory.push_str("name\trows\tcols\tscalars\n");
    for (_, p) in model.store.iter() {
        let (r, c) = p.value.shape();
        inventory.push_str(&format!("{}\t{r}\t{c}\t{}\n", p.name, r * c));
    }
    fs::write(out_path(cfg, "params.tsv")?, inventory)?;
    Ok(TrainOutcome {
        history: result.history,
        param_count: model.param_count(),
    })
}

/// Rebuilds the trained model, refusing checkpoints from another config.
pub fn load_model(cfg: &ExperimentConfig, ds: &InteractionDataset) -> Result<Model, CliError> {
    let path = cfg.output_dir.join(CHECKPOINT_FILE);
    let ckpt = Checkpoint::load(&path)
        .map_err(|e| CliError::Input(format!("cannot load {} ({e}); run `train` first", path.display())))?;
    if ckpt.config_hash != cfg.config_hash() {
        return Err(CliError::Provenance(format!(
            "{} has config hash {}, current config is {}",
            path.display(),
            ckpt.config_hash,
            cfg.config_hash()
        )));
    }
    let mut model = Model::for_dataset(&cfg.model, ds, ckpt.seed)?;
    ckpt.restore(&mut model)
        .map_err(|e| CliError::Provenance(e.to_string()))?;
    Ok(model)
}

pub fn eval(cfg: &ExperimentConfig, split: Split) -> Result<EvalReport, CliError> {
    let ds = load_prepared(cfg)?;
    let model = load_model(cfg, &ds)?;
    let report = evaluate(&model, &ds, split, &cfg.eval, cfg.seed)?;
    write_json(
        &out_path(cfg, &format!("eval_{}.json", label(split)))?,
        &Stamped {
            config_hash: &cfg.config_hash(),
            seed: cfg.seed,
            body: &report,
        },
    )?;
    Ok(report)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Runs the configured analyses over every seed and writes one TSV per
/// analysis. Multi-seed tables end with `mean` rows.
pub fn analyze(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let ds = load_prepared(cfg)?;
    let seeds = cfg.seeds();
    let header = tsv_header(cfg, cfg.seed);
    let mut written = Vec::new();
    for task in &cfg.analyze.tasks {
        let (name, body) = match task {
            AnalyzeTask::Groups => {
                let g = frequency_groups(&ds.train_frequencies(), cfg.eval.n_groups)?;
                let mut s = String::from("group\titem_count\toccurrence_mass\n");
                for k in 0..g.n_groups {
                    s.push_str(&format!("{k}\t{}\t{}\n", g.item_counts[k], g.masses[k]));
                }
                ("groups.tsv", s)
            }
            AnalyzeTask::Probe => {
                let mut s = String::from("seed\titems\tunique_attributes\taccuracy\n");
                let stats = ds.stats();
                let mut accs = Vec::new();
                for &seed in &seeds {
                    let acc = memorization_probe(&ds.attributes, cfg.analyze.probe_hidden, cfg.analyze.probe_epochs, seed)?;
                    accs.push(acc);
                    s.push_str(&format!("{seed}\t{}\t{}\t{acc}\n", stats.items, stats.unique_attributes));
                }
                s.push_str(&format!("mean\t{}\t{}\t{}\n", stats.items, stats.unique_attributes, mean(&accs)));
                ("probe.tsv", s)
            }
            AnalyzeTask::Removal => {
                let mut s = String::from("seed\tencoder\tratio\tparam_count\tencoder_param_count\tndcg@10\tdiversity\n");
                let mut acc: BTreeMap<(String, u64), RemovalMeans> = BTreeMap::new();
                check_model_fits(&ModelConfig { encoder: EncoderKind::Pir, ..cfg.model.clone() }, &ds)?;
                for &seed in &seeds {
                    let setup = setup(cfg, seed);
                    for encoder in [EncoderKind::FullTable, EncoderKind::Pir] {
                        for row in removal_experiment(&ds, &cfg.analyze.removal_ratios, encoder, &setup).map_err(|e| numeric(cfg, e))? {
                            let enc = label(row.encoder);
                            s.push_str(&format!(
                                "{seed}\t{enc}\t{}\t{}\t{}\t{}\t{}\n",
                                row.ratio, row.param_count, row.encoder_param_count, row.ndcg, row.diversity
                            ));
                            let e = acc.entry((enc, row.ratio.to_bits())).or_insert((row.ratio, vec![], vec![]));
                            e.1.push(row.ndcg);
                            e.2.push(row.diversity);
                        }
                    }
                }
                for ((enc, _), (ratio, ndcg, div)) in &acc {
                    s.push_str(&format!("mean\t{enc}\t{ratio}\t\t\t{}\t{}\n", mean(ndcg), mean(div)));
                }
                ("removal.tsv", s)
            }
            AnalyzeTask::Growth => {
                let mut s = String::from("seed\tr\tencoder\titems\tparam_count\tencoder_param_count\tndcg@10\n");
                let rs: Vec<usize> = (1..=cfg.analyze.partitions).collect();
                let mut acc: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
                for &seed in &seeds {
                    for row in growth_experiment(&ds, cfg.analyze.partitions, &rs, &setup(cfg, seed)).map_err(|e| numeric(cfg, e))? {
                        let enc = label(row.encoder);
                        s.push_str(&format!(
                            "{seed}\t{}\t{enc}\t{}\t{}\t{}\t{}\n",
                            row.r, row.items, row.param_count, row.encoder_param_count, row.ndcg
                        ));
                        acc.entry((row.r, enc)).or_default().push(row.ndcg);
                    }
                }
                for ((r, enc), ndcg) in &acc {
                    s.push_str(&format!("mean\t{r}\t{enc}\t\t\t\t{}\n", mean(ndcg)));
                }
                ("growth.tsv", s)
            }
        };
        let path = out_path(cfg, name)?;
        fs::write(&path, format!("{header}{body}"))?;
        written.push(path);
    }
    Ok(written)
}

fn setup(cfg: &ExperimentConfig, seed: u64) -> ExperimentSetup {
    ExperimentSetup {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        eval: cfg.eval.clone(),
        seed,
    }
}

/// Every item with the context of its latest training interaction (zeros
/// for items never seen in training).
fn catalog_batch(ds: &InteractionDataset) -> Result<ItemBatch, CliError> {
    let mut latest: Vec<Option<(i64, usize, usize)>> = vec![None; ds.item_count()];
    for u in 0..ds.user_count() {
        for (k, e) in ds.train_prefix(u).iter().enumerate() {
            let slot = &mut latest[e.item];
            if slot.is_none_or(|(t, _, _)| e.timestamp >= t) {
                *slot = Some((e.timestamp, u, k));
            }
        }
    }
    let mut contexts = Tensor::zeros(ds.item_count(), CONTEXT_DIM);
    for (i, l) in latest.iter().enumerate() {
        if let Some((_, u, k)) = l {
            contexts.row_mut(i).copy_from_slice(ds.contexts[*u][*k].as_slice());
        }
    }
    Ok(ItemBatch::new((0..ds.item_count()).collect(), ds.attributes.clone(), contexts)?)
}

/// Writes proxy weights, PIR vectors and a PCA projection of the item
/// vectors. Only proxy-based encoders can be exported.
pub fn export(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    if cfg.model.encoder != EncoderKind::Pir {
        return Err(CliError::Input(format!(
            "export needs the proxy encoder; `{}` has no proxy weights to export",
            label(cfg.model.encoder)
        )));
    }
    let ds = load_prepared(cfg)?;
    let model = load_model(cfg, &ds)?;
    let pir = model.encoder.as_pir().expect("proxy encoder");
    let batch = catalog_batch(&ds)?;
    let header = tsv_header(cfg, cfg.seed);
    let mut written = Vec::new();

    let weights = pir.proxy_weights(&model.store, &batch.attributes, &batch.contexts, Some(&batch.ids))?;
    let path = out_path(cfg, "proxy_weights.tsv")?;
    let mut out = BufWriter::new(fs::File::create(&path)?);
    out.write_all(header.as_bytes())?;
    write_proxy_weights(&mut out, &batch.ids, &weights)?;
    out.flush()?;
    written.push(path);

    let vectors = pir.pir_vectors(&model.store, &batch.attributes, &batch.contexts, Some(&batch.ids))?;
    let path = out_path(cfg, "pir_vectors.tsv")?;
    let mut out = BufWriter::new(fs::File::create(&path)?);
    out.write_all(header.as_bytes())?;
    write_proxy_weights(&mut out, &batch.ids, &vectors)?;
    out.flush()?;
    written.push(path);

    let items = model.encode_items(&batch)?;
    let pca = pca_project(&items, 2)?;
    let mut s = header.clone();
    if pca.degenerate {
        s.push_str("# warning: item vectors have zero variance\n");
    }
    s.push_str("item_id\tpc1\tpc2\n");
    for i in 0..ds.item_count() {
        s.push_str(&format!("{i}\t{}\t{}\n", pca.coords.get(i, 0), pca.coords.get(i, 1)));
    }
    let path = out_path(cfg, "pca.tsv")?;
    fs::write(&path, s)?;
    written.push(path);
    Ok(written)
}
