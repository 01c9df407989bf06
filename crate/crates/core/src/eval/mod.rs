//! Leave-one-out evaluation and the analysis harnesses built on it.

mod experiments;
mod groups;
mod locality;
mod pca;
mod probe;

pub use experiments::{growth_experiment, removal_experiment, ExperimentSetup, GrowthRow, RemovalRow};
pub use groups::{frequency_groups, FrequencyGroups};
pub use locality::{content_locality_trial, spectral_norm, LocalityTrial};
pub use pca::{pca_project, PcaResult};
pub use probe::memorization_probe;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{sample_negatives, InteractionDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{Model, UserInput};
use crate::rng::stream;
use crate::tensor::TensorError;

/// Candidate count of the standard protocol: one positive and 100 negatives.
pub const STANDARD_CANDIDATES: usize = 101;
const EVAL_STREAM: u64 = 0xE7A1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Second-to-last event, history is the training prefix.
    #[default]
    Valid,
    /// Last event, history includes the validation event.
    Test,
    /// Last training event, history is the rest of the training prefix.
    TrainTarget,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Negatives {
    /// `n` items the user never interacted with, frozen per seed and user.
    Sampled(usize),
    /// Every item the user never interacted with.
    AllUnowned,
}

impl Default for Negatives {
    fn default() -> Self {
        Negatives::Sampled(STANDARD_CANDIDATES - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub negatives: Negatives,
    pub n_groups: usize,
    /// Length of the per-user recommendation list used for diversity.
    pub top_n: usize,
    pub exec: Exec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![5, 10],
            negatives: Negatives::default(),
            n_groups: 10,
            top_n: 10,
            exec: Exec::Parallel,
        }
    }
}

/// `(hit, ndcg)` of a single relevant item at 1-based `rank` among 101.
pub fn rank_metrics(rank: usize, k: usize) -> Result<(f64, f64)> {
    rank_metrics_in(rank, k, STANDARD_CANDIDATES)
}

pub fn rank_metrics_in(rank: usize, k: usize, candidates: usize) -> Result<(f64, f64)> {
    if rank == 0 || rank > candidates {
        return Err(TensorError::Contract(format!("rank {rank} outside 1..={candidates}")).into());
    }
    if rank <= k {
        Ok((1.0, 1.0 / ((rank + 1) as f64).log2()))
    } else {
        Ok((0.0, 0.0))
    }
}

/// Fraction of the catalog that appears in at least one list.
pub fn diversity<L: AsRef<[usize]>>(lists: &[L], item_count: usize) -> f64 {
    let union: BTreeSet<usize> = lists.iter().flat_map(|l| l.as_ref().iter().copied()).collect();
    union.len() as f64 / item_count as f64
}

/// One user's evaluation step.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCase {
    pub user: usize,
    /// History events are `0..history_end` of the user sequence.
    pub history_end: usize,
    /// Event index of the held-out target.
    pub target_event: usize,
    /// Positive first.
    pub candidates: Vec<usize>,
}

/// Anything that scores an [`EvalCase`]'s candidates, higher is better.
pub trait CandidateScorer: Sync {
    fn score_candidates(&self, dataset: &InteractionDataset, case: &EvalCase) -> Result<Vec<f64>>;
}

impl CandidateScorer for Model {
    fn score_candidates(&self, dataset: &InteractionDataset, case: &EvalCase) -> Result<Vec<f64>> {
        let input = UserInput::from_events(
            dataset,
            case.user,
            case.history_end,
            case.target_event,
            &case.candidates,
            self.config.max_len,
        )?;
        self.score(&input)
    }
}

/// Builds the frozen evaluation case of `user`.
pub fn eval_case(
    dataset: &InteractionDataset,
    user: usize,
    split: Split,
    negatives: Negatives,
    seed: u64,
) -> Result<EvalCase> {
    let s = dataset.split(user);
    let (history_end, target_event) = match split {
        Split::Valid => (s.train_len, s.valid),
        Split::Test => (s.test, s.test),
        Split::TrainTarget => (s.train_len - 1, s.train_len - 1),
    };
    let target = dataset.sequences[user][target_event].item;
    let negs = match negatives {
        Negatives::Sampled(n) => sample_negatives(dataset, user, n, &mut stream(seed, &[EVAL_STREAM, user as u64]))?,
        Negatives::AllUnowned => {
            let owned: HashSet<usize> = dataset.positive_set(user);
            (0..dataset.item_count()).filter(|i| !owned.contains(i)).collect()
        }
    };
    let mut candidates = Vec::with_capacity(negs.len() + 1);
    candidates.push(target);
    candidates.extend(negs);
    Ok(EvalCase {
        user,
        history_end,
        target_event,
        candidates,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserOutcome {
    pub user: usize,
    pub target: usize,
    pub rank: usize,
    pub candidates: usize,
    /// Highest-scoring candidates, best first.
    pub top: Vec<usize>,
}

/// Pessimistic rank of the positive (row 0): equal-scored negatives go first.
pub fn pessimistic_rank(scores: &[f64]) -> usize {
    1 + scores[1..].iter().filter(|&&s| s >= scores[0]).count()
}

fn top_items(candidates: &[usize], scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(candidates[a].cmp(&candidates[b])));
    order.into_iter().take(n).map(|k| candidates[k]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub group: usize,
    pub item_count: usize,
    pub occurrence_mass: u64,
    /// Users whose target falls in the group.
    pub users: usize,
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub users: usize,
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub diversity: f64,
    /// Per frequency group, at the largest cutoff in `ks`.
    pub per_group: Vec<GroupRecord>,
    pub param_count: usize,
    pub runtime_seconds: f64,
}

impl EvalReport {
    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn hr_at(&self, k: usize) -> f64 {
        self.hr.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// Scores every user's frozen case and ranks the positive.
pub fn rank_users<S: CandidateScorer + ?Sized>(
    scorer: &S,
    dataset: &InteractionDataset,
    split: Split,
    config: &EvalConfig,
    seed: u64,
) -> Result<Vec<UserOutcome>> {
    config.exec.try_map(dataset.user_count(), |u| {
        let case = eval_case(dataset, u, split, config.negatives, seed)?;
        let scores = scorer.score_candidates(dataset, &case)?;
        if scores.len() != case.candidates.len() {
            return Err(Error::Config(format!(
                "{} scores for {} candidates",
                scores.len(),
                case.candidates.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(TensorError::NonFinite { op: "score" }.into());
        }
        Ok(UserOutcome {
            user: u,
            target: case.candidates[0],
            rank: pessimistic_rank(&scores),
            candidates: scores.len(),
            top: top_items(&case.candidates, &scores, config.top_n),
        })
    })
}

/// Full report from per-user outcomes.
pub fn summarize(
    outcomes: &[UserOutcome],
    dataset: &InteractionDataset,
    split: Split,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if outcomes.is_empty() {
        return Err(Error::Data("no users to evaluate".into()));
    }
    let n = outcomes.len() as f64;
    let mut hr = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    for &k in &config.ks {
        let (mut h, mut g) = (0.0, 0.0);
        for o in outcomes {
            let (a, b) = rank_metrics_in(o.rank, k, o.candidates)?;
            h += a;
            g += b;
        }
        hr.insert(k, h / n);
        ndcg.insert(k, g / n);
    }
    let lists: Vec<&[usize]> = outcomes.iter().map(|o| o.top.as_slice()).collect();
    let groups = frequency_groups(&dataset.train_frequencies(), config.n_groups)?;
    let k_max = config.ks.iter().copied().max().unwrap_or(10);
    let mut per_group: Vec<GroupRecord> = (0..groups.n_groups)
        .map(|g| GroupRecord {
            group: g,
            item_count: groups.item_counts[g],
            occurrence_mass: groups.masses[g],
            users: 0,
            hr: 0.0,
            ndcg: 0.0,
        })
        .collect();
    for o in outcomes {
        let rec = &mut per_group[groups.group_of[o.target]];
        let (a, b) = rank_metrics_in(o.rank, k_max, o.candidates)?;
        rec.users += 1;
        rec.hr += a;
        rec.ndcg += b;
    }
    for rec in &mut per_group {
        if rec.users > 0 {
            rec.hr /= rec.users as f64;
            rec.ndcg /= rec.users as f64;
        }
    }
    Ok(EvalReport {
        split,
        users: outcomes.len(),
        hr,
        ndcg,
        diversity: diversity(&lists, dataset.item_count()),
        per_group,
        param_count: 0,
        runtime_seconds: 0.0,
    })
}

/// Leave-one-out evaluation of any scorer.
pub fn evaluate_with<S: CandidateScorer + ?Sized>(
    scorer: &S,
    dataset: &InteractionDataset,
    split: Split,
    config: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    let start = Instant::now();
    let outcomes = rank_users(scorer, dataset, split, config, seed)?;
    let mut report = summarize(&outcomes, dataset, split, config)?;
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

pub fn evaluate(
    model: &Model,
    dataset: &InteractionDataset,
    split: Split,
    config: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    let mut report = evaluate_with(model, dataset, split, config, seed)?;
    report.param_count = model.param_count();
    Ok(report)
}
