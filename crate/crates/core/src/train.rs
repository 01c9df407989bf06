//! Last-item-prediction training with early stopping on validation NDCG.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{random_sequence_cut, sample_negatives, ContextVector, InteractionDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, Split};
use crate::exec::Exec;
use crate::model::{Model, UserInput};
use crate::rng::{mix_seed, stream};
use crate::tensor::{AdamW, Graph, ParamGrads, ParamStore, TensorError};

const SHUFFLE_STREAM: u64 = 0x5A0F;
const EXAMPLE_STREAM: u64 = 0xE8A3;
const DROPOUT_STREAM: u64 = 0xD809;
const REPLACE_ATTEMPTS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Sampled negatives per training example.
    pub n_negatives: usize,
    pub p_cut: f64,
    pub p_item_replace: f64,
    pub weight_decay: f64,
    pub lr: f64,
    pub eval_every: usize,
    pub patience: usize,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 128,
            n_negatives: 100,
            p_cut: 0.5,
            p_item_replace: 0.0,
            weight_decay: 0.0,
            lr: 1e-4,
            eval_every: 1,
            patience: 10,
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_cut", self.p_cut), ("p_item_replace", self.p_item_replace)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.n_negatives == 0 {
            return Err(Error::Config("batch_size, eval_every and n_negatives must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "lr ({}) and weight_decay ({}) must be non-negative",
                self.lr, self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One user's training step before encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub user: usize,
    pub history: Vec<usize>,
    pub history_contexts: Vec<ContextVector>,
    pub target: usize,
    pub target_context: ContextVector,
    pub negatives: Vec<usize>,
}

impl TrainingExample {
    pub fn candidates(&self) -> Vec<usize> {
        let mut c = Vec::with_capacity(self.negatives.len() + 1);
        c.push(self.target);
        c.extend_from_slice(&self.negatives);
        c
    }

    pub fn to_input(&self, dataset: &InteractionDataset) -> Result<UserInput> {
        UserInput::assemble(
            dataset,
            &self.history,
            &self.history_contexts,
            &self.candidates(),
            self.target_context,
        )
    }
}

/// Cuts the training prefix, takes its last event as the target and up to
/// `max_len` earlier events as history, applies random item replacement to
/// the history, and samples negatives the user never interacted with.
pub fn make_example<R: Rng>(
    dataset: &InteractionDataset,
    user: usize,
    config: &TrainConfig,
    max_len: usize,
    rng: &mut R,
) -> Result<TrainingExample> {
    let prefix = dataset.train_prefix(user);
    let cut_len = random_sequence_cut(prefix, rng, config.p_cut).len();
    if cut_len < 2 {
        return Err(Error::Data(format!("user {user} has a training prefix shorter than 2")));
    }
    let t = cut_len - 1;
    let start = t.saturating_sub(max_len);
    let contexts = &dataset.contexts[user];
    let split = dataset.split(user);
    let held_out: HashSet<usize> = [split.valid, split.test]
        .iter()
        .map(|&k| dataset.sequences[user][k].item)
        .collect();
    let mut history: Vec<usize> = prefix[start..t].iter().map(|e| e.item).collect();
    if config.p_item_replace > 0.0 {
        for item in &mut history {
            if rng.random::<f64>() < config.p_item_replace {
                if let Some(sub) = (0..REPLACE_ATTEMPTS)
                    .map(|_| rng.random_range(0..dataset.item_count()))
                    .find(|i| !held_out.contains(i))
                {
                    *item = sub;
                }
            }
        }
    }
    let negatives = sample_negatives(dataset, user, config.n_negatives, rng)?;
    Ok(TrainingExample {
        user,
        history,
        history_contexts: contexts[start..t].to_vec(),
        target: prefix[t].item,
        target_context: contexts[t],
        negatives,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub users: usize,
}

/// Parameter and gradient norms, one line per parameter.
pub fn diagnostics(store: &ParamStore) -> String {
    store
        .iter()
        .map(|(_, p)| {
            let grad = p.grad.as_ref().map_or(f64::NAN, |g| g.norm());
            format!("{}\tvalue_norm={}\tgrad_norm={}", p.name, p.value.norm(), grad)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn numeric_abort(store: &ParamStore, message: String) -> Error {
    Error::NumericAbort {
        message,
        diagnostics: diagnostics(store),
    }
}

/// Random stream behind `user`'s example in `epoch`.
pub fn example_rng(seed: u64, epoch: usize, user: usize) -> rand_chacha::ChaCha8Rng {
    stream(seed, &[EXAMPLE_STREAM, epoch as u64, user as u64])
}

fn user_gradients(
    model: &Model,
    dataset: &InteractionDataset,
    config: &TrainConfig,
    epoch: usize,
    seed: u64,
    user: usize,
    scale: f64,
) -> Result<(f64, ParamGrads)> {
    let mut rng = example_rng(seed, epoch, user);
    let example = make_example(dataset, user, config, model.config.max_len, &mut rng)?;
    let input = example.to_input(dataset)?;
    let mut g = Graph::with_params(&model.store).train_mode(mix_seed(seed, &[DROPOUT_STREAM, epoch as u64, user as u64]));
    let loss = model.loss_var(&mut g, &input)?;
    let value = g.value(loss).item();
    let scaled = g.scale(loss, scale)?;
    g.backward(scaled)?;
    Ok((value, g.take_param_grads()))
}

/// Summed gradients of the mean batch loss, merged in user order.
pub fn batch_gradients(
    model: &Model,
    dataset: &InteractionDataset,
    config: &TrainConfig,
    epoch: usize,
    seed: u64,
    users: &[usize],
) -> Result<(Vec<f64>, ParamGrads)> {
    let scale = 1.0 / users.len() as f64;
    let parts = config
        .exec
        .try_map(users.len(), |k| user_gradients(model, dataset, config, epoch, seed, users[k], scale))
        .map_err(|e| match e {
            Error::Tensor(TensorError::NonFinite { op }) => {
                numeric_abort(&model.store, format!("non-finite value in `{op}` during epoch {epoch}"))
            }
            other => other,
        })?;
    let mut losses = Vec::with_capacity(parts.len());
    let mut total = ParamGrads::default();
    for (loss, grads) in parts {
        losses.push(loss);
        total.merge(grads);
    }
    Ok((losses, total))
}

/// One pass over all users in shuffled order.
pub fn train_epoch(
    model: &mut Model,
    optimizer: &mut AdamW,
    dataset: &InteractionDataset,
    config: &TrainConfig,
    epoch: usize,
    seed: u64,
) -> Result<EpochStats> {
    let mut users: Vec<usize> = (0..dataset.user_count()).collect();
    users.shuffle(&mut stream(seed, &[SHUFFLE_STREAM, epoch as u64]));
    let mut loss_sum = 0.0;
    for batch in users.chunks(config.batch_size) {
        let (losses, grads) = batch_gradients(model, dataset, config, epoch, seed, batch)?;
        loss_sum += losses.iter().sum::<f64>();
        let store = &mut model.store;
        store.zero_grads();
        store.accumulate_grads(&grads);
        store.fill_missing_grads();
        if store.iter().any(|(_, p)| p.grad.as_ref().is_some_and(|g| !g.is_finite())) {
            return Err(numeric_abort(store, format!("non-finite gradient in epoch {epoch}")));
        }
        optimizer.step(store)?;
        if store.iter().any(|(_, p)| !p.value.is_finite()) {
            return Err(numeric_abort(store, format!("non-finite parameter after update in epoch {epoch}")));
        }
    }
    let mean_loss = loss_sum / users.len() as f64;
    if !mean_loss.is_finite() {
        return Err(numeric_abort(&model.store, format!("non-finite loss in epoch {epoch}")));
    }
    Ok(EpochStats {
        epoch,
        mean_loss,
        users: users.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    pub evals: Vec<EvalRecord>,
    pub best_epoch: Option<usize>,
    pub best_ndcg: Option<f64>,
    pub stopped_early: bool,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub history: History,
    pub best: Checkpoint,
}

/// Trains, evaluating on the validation split every `eval_every` epochs.
/// Keeps the parameters with the highest NDCG@10 (or at the largest
/// cutoff when 10 is not evaluated) and stops once more than
/// `patience` evaluations in a row fail to improve it. The model ends up
/// holding the best parameters.
pub fn fit(
    model: &mut Model,
    dataset: &InteractionDataset,
    train: &TrainConfig,
    eval: &EvalConfig,
    seed: u64,
) -> Result<FitResult> {
    train.validate()?;
    let mut optimizer = AdamW::new(&model.store, train.lr, train.weight_decay)?;
    let mut history = History::default();
    let mut best = Checkpoint::capture(model, Some(&optimizer), 0, seed);
    let mut best_ndcg = f64::NEG_INFINITY;
    let mut stale = 0;
    let select_k = if eval.ks.contains(&10) { 10 } else { eval.ks.iter().copied().max().unwrap_or(10) };
    for epoch in 1..=train.epochs {
        let stats = train_epoch(model, &mut optimizer, dataset, train, epoch, seed)?;
        history.epochs.push(stats);
        if epoch % train.eval_every != 0 {
            continue;
        }
        let report = evaluate(model, dataset, Split::Valid, eval, seed)?;
        let ndcg = report.ndcg_at(select_k);
        history.evals.push(EvalRecord {
            epoch,
            hr: report.hr,
            ndcg: report.ndcg,
        });
        if ndcg > best_ndcg {
            best_ndcg = ndcg;
            stale = 0;
            best = Checkpoint::capture(model, Some(&optimizer), epoch as u64, seed);
            history.best_epoch = Some(epoch);
            history.best_ndcg = Some(ndcg);
        } else {
            stale += 1;
            if stale > train.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    best.restore(model)?;
    Ok(FitResult { history, best })
}
