use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::context::{ContextFeaturizer, ContextVector, CONTEXT_DIM};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Users with this many interactions or fewer are dropped.
pub const MIN_INTERACTIONS_EXCLUSIVE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub item: usize,
    pub timestamp: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Dense,
    MultiHot,
}

/// One row of a raw interaction log, before re-indexing.
#[derive(Clone, Debug, PartialEq)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
}

/// Per-item attributes keyed by item token.
#[derive(Clone, Debug)]
pub enum AttributeSource {
    Dense(HashMap<String, Vec<f64>>),
    Tags(HashMap<String, Vec<String>>),
    /// No attribute file; every item gets the constant feature `[1.0]`.
    None,
}

/// Leave-one-out split of one user sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    /// Events `0..train_len` form the training prefix.
    pub train_len: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitSpec {
    pub fn for_length(len: usize) -> Self {
        SplitSpec {
            train_len: len - 2,
            valid: len - 2,
            test: len - 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
    pub unique_attributes: usize,
    pub duplicates: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionDataset {
    pub user_tokens: Vec<String>,
    pub item_tokens: Vec<String>,
    /// Chronological events per user.
    pub sequences: Vec<Vec<Event>>,
    /// `item_count x d_A`.
    pub attributes: Tensor,
    pub attribute_kind: AttributeKind,
    pub featurizer: ContextFeaturizer,
    /// Context vector of every event, aligned with `sequences`.
    pub contexts: Vec<Vec<ContextVector>>,
}

impl InteractionDataset {
    /// Drops short users, re-indexes users and items in first-seen order,
    /// and sorts each sequence by timestamp (stable, so file order breaks ties).
    pub fn from_raw(raw: &[RawInteraction], attributes: &AttributeSource) -> Result<Self> {
        let mut per_user: HashMap<&str, usize> = HashMap::new();
        for r in raw {
            *per_user.entry(&r.user).or_default() += 1;
        }
        let mut user_index: HashMap<&str, usize> = HashMap::new();
        let mut item_index: HashMap<&str, usize> = HashMap::new();
        let mut user_tokens = Vec::new();
        let mut item_tokens = Vec::new();
        let mut sequences: Vec<Vec<Event>> = Vec::new();
        for r in raw {
            if per_user[r.user.as_str()] <= MIN_INTERACTIONS_EXCLUSIVE {
                continue;
            }
            let u = *user_index.entry(&r.user).or_insert_with(|| {
                user_tokens.push(r.user.clone());
                sequences.push(Vec::new());
                user_tokens.len() - 1
            });
            let i = *item_index.entry(&r.item).or_insert_with(|| {
                item_tokens.push(r.item.clone());
                item_tokens.len() - 1
            });
            sequences[u].push(Event {
                item: i,
                timestamp: r.timestamp,
            });
        }
        if sequences.is_empty() {
            return Err(Error::Data("no users left after preprocessing".into()));
        }
        for s in &mut sequences {
            s.sort_by_key(|e| e.timestamp);
        }
        let (matrix, kind) = build_attributes(&item_tokens, attributes)?;
        Self::assemble(user_tokens, item_tokens, sequences, matrix, kind)
    }

    /// Builds from already-indexed sequences (ids `< attributes.rows()`).
    /// Short users are dropped; item ids are kept as given.
    pub fn from_indexed(
        sequences: Vec<Vec<Event>>,
        attributes: Tensor,
        attribute_kind: AttributeKind,
    ) -> Result<Self> {
        let mut sequences: Vec<Vec<Event>> = sequences
            .into_iter()
            .filter(|s| s.len() > MIN_INTERACTIONS_EXCLUSIVE)
            .collect();
        if sequences.is_empty() {
            return Err(Error::Data("no users left after preprocessing".into()));
        }
        for s in &mut sequences {
            s.sort_by_key(|e| e.timestamp);
        }
        let user_tokens = (0..sequences.len()).map(|u| format!("u{u}")).collect();
        let item_tokens = (0..attributes.rows()).map(|i| format!("i{i}")).collect();
        Self::assemble(user_tokens, item_tokens, sequences, attributes, attribute_kind)
    }

    fn assemble(
        user_tokens: Vec<String>,
        item_tokens: Vec<String>,
        sequences: Vec<Vec<Event>>,
        attributes: Tensor,
        attribute_kind: AttributeKind,
    ) -> Result<Self> {
        let featurizer =
            ContextFeaturizer::from_timestamps(sequences.iter().flatten().map(|e| e.timestamp));
        let contexts = sequences
            .iter()
            .map(|s| s.iter().map(|e| featurizer.featurize(e.timestamp)).collect())
            .collect();
        let ds = InteractionDataset {
            user_tokens,
            item_tokens,
            sequences,
            attributes,
            attribute_kind,
            featurizer,
            contexts,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n_items = self.item_count();
        if self.attributes.rows() != n_items {
            return Err(Error::Data(format!(
                "{} attribute rows for {} items",
                self.attributes.rows(),
                n_items
            )));
        }
        for (u, s) in self.sequences.iter().enumerate() {
            if s.len() <= MIN_INTERACTIONS_EXCLUSIVE {
                return Err(Error::Data(format!("user {u} has only {} interactions", s.len())));
            }
            if s.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
                return Err(Error::Data(format!("user {u} sequence is not chronological")));
            }
            if let Some(e) = s.iter().find(|e| e.item >= n_items) {
                return Err(Error::Lookup {
                    item: e.item,
                    catalog: n_items,
                });
            }
        }
        Ok(())
    }

    pub fn user_count(&self) -> usize {
        self.sequences.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_tokens.len()
    }

    pub fn attribute_dim(&self) -> usize {
        self.attributes.cols()
    }

    pub fn context_dim(&self) -> usize {
        CONTEXT_DIM
    }

    pub fn interaction_count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn split(&self, user: usize) -> SplitSpec {
        SplitSpec::for_length(self.sequences[user].len())
    }

    pub fn train_prefix(&self, user: usize) -> &[Event] {
        &self.sequences[user][..self.split(user).train_len]
    }

    pub fn attribute(&self, item: usize) -> &[f64] {
        self.attributes.row(item)
    }

    /// Items the user interacted with anywhere in the sequence.
    pub fn positive_set(&self, user: usize) -> HashSet<usize> {
        self.sequences[user].iter().map(|e| e.item).collect()
    }

    /// Occurrence counts over the training prefixes only.
    pub fn train_frequencies(&self) -> Vec<u64> {
        let mut f = vec![0u64; self.item_count()];
        for u in 0..self.user_count() {
            for e in self.train_prefix(u) {
                f[e.item] += 1;
            }
        }
        f
    }

    pub fn item_id(&self, token: &str) -> Option<usize> {
        self.item_tokens.iter().position(|t| t == token)
    }

    pub fn stats(&self) -> DatasetStats {
        let users = self.user_count();
        let items = self.item_count();
        let interactions = self.interaction_count();
        let unique: HashSet<Vec<u64>> = (0..items)
            .map(|i| self.attribute(i).iter().map(|v| v.to_bits()).collect())
            .collect();
        let unique_attributes = unique.len();
        DatasetStats {
            users,
            items,
            interactions,
            density: interactions as f64 / (users as f64 * items as f64),
            unique_attributes,
            duplicates: items as f64 / unique_attributes.max(1) as f64,
        }
    }

    /// Keeps items `0..n_items` and the events that touch them, then drops
    /// users left with too few interactions. `n_items == item_count()`
    /// returns an identical dataset.
    pub fn truncate_catalog(&self, n_items: usize) -> Result<Self> {
        if n_items == self.item_count() {
            return Ok(self.clone());
        }
        if n_items == 0 || n_items > self.item_count() {
            return Err(Error::Config(format!(
                "cannot truncate catalog of {} items to {n_items}",
                self.item_count()
            )));
        }
        let mut user_tokens = Vec::new();
        let mut sequences = Vec::new();
        for (u, s) in self.sequences.iter().enumerate() {
            let kept: Vec<Event> = s.iter().copied().filter(|e| e.item < n_items).collect();
            if kept.len() > MIN_INTERACTIONS_EXCLUSIVE {
                user_tokens.push(self.user_tokens[u].clone());
                sequences.push(kept);
            }
        }
        if sequences.is_empty() {
            return Err(Error::Data("catalog truncation left no users".into()));
        }
        let attributes = Tensor::from_rows(
            &(0..n_items).map(|i| self.attribute(i).to_vec()).collect::<Vec<_>>(),
        )?;
        Self::assemble(
            user_tokens,
            self.item_tokens[..n_items].to_vec(),
            sequences,
            attributes,
            self.attribute_kind,
        )
    }

    /// Distinct items (sorted) the user interacted with.
    pub fn positive_items_sorted(&self, user: usize) -> Vec<usize> {
        let set: BTreeSet<usize> = self.sequences[user].iter().map(|e| e.item).collect();
        set.into_iter().collect()
    }
}

fn build_attributes(items: &[String], source: &AttributeSource) -> Result<(Tensor, AttributeKind)> {
    match source {
        AttributeSource::None => Ok((Tensor::ones(items.len(), 1), AttributeKind::Dense)),
        AttributeSource::Dense(map) => {
            let mut rows = Vec::with_capacity(items.len());
            for tok in items {
                let row = map
                    .get(tok)
                    .ok_or_else(|| Error::Data(format!("item `{tok}` has no attribute row")))?;
                rows.push(row.clone());
            }
            let dim = rows.first().map_or(0, Vec::len);
            if dim == 0 || rows.iter().any(|r| r.len() != dim) {
                return Err(Error::Data("attribute rows have inconsistent dimensions".into()));
            }
            Ok((Tensor::from_rows(&rows)?, AttributeKind::Dense))
        }
        AttributeSource::Tags(map) => {
            let mut vocab: HashMap<&str, usize> = HashMap::new();
            let mut item_tags = Vec::with_capacity(items.len());
            for tok in items {
                let tags = map
                    .get(tok)
                    .ok_or_else(|| Error::Data(format!("item `{tok}` has no attribute row")))?;
                let mut ids = Vec::with_capacity(tags.len());
                for t in tags {
                    let next = vocab.len();
                    ids.push(*vocab.entry(t.as_str()).or_insert(next));
                }
                item_tags.push(ids);
            }
            let dim = vocab.len().max(1);
            let mut m = Tensor::zeros(items.len(), dim);
            for (i, ids) in item_tags.iter().enumerate() {
                for &t in ids {
                    m.set(i, t, 1.0);
                }
            }
            Ok((m, AttributeKind::MultiHot))
        }
    }
}
