//! Item encoding layer: `(item id, attributes, context) -> item vector`.
//!
//! Three interchangeable encoders share one interface: the full look-up
//! table baseline, the same baseline with infrequent items collapsed onto a
//! shared unknown row, and the proxy-based representation.

mod full_table;
mod pir;

pub use full_table::{FullTableEncoder, UnknownTokenWrapper};
pub use full_table::least_frequent;
pub use pir::{write_proxy_weights, PirEncoder, ProxyBank};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ContextVector, InteractionDataset};
use crate::error::{Error, Result};
use crate::model::{DataDims, ModelConfig};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    FullTable,
    Unknown,
    #[default]
    Pir,
}

/// Inputs for a batch of items, one row per item.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemBatch {
    pub ids: Vec<usize>,
    pub attributes: Tensor,
    pub contexts: Tensor,
}

impl ItemBatch {
    pub fn new(ids: Vec<usize>, attributes: Tensor, contexts: Tensor) -> Result<Self> {
        if attributes.rows() != ids.len() || contexts.rows() != ids.len() {
            return Err(Error::Config(format!(
                "item batch of {} ids with {} attribute rows and {} context rows",
                ids.len(),
                attributes.rows(),
                contexts.rows()
            )));
        }
        Ok(ItemBatch {
            ids,
            attributes,
            contexts,
        })
    }

    /// Looks up attributes in `dataset`; `contexts[k]` goes with `items[k]`.
    pub fn from_dataset(dataset: &InteractionDataset, items: &[usize], contexts: &[ContextVector]) -> Result<Self> {
        let mut attrs = Tensor::zeros(items.len(), dataset.attribute_dim());
        let mut ctx = Tensor::zeros(items.len(), crate::data::CONTEXT_DIM);
        for (r, (&i, c)) in items.iter().zip(contexts).enumerate() {
            if i >= dataset.item_count() {
                return Err(Error::Lookup {
                    item: i,
                    catalog: dataset.item_count(),
                });
            }
            attrs.row_mut(r).copy_from_slice(dataset.attribute(i));
            ctx.row_mut(r).copy_from_slice(c.as_slice());
        }
        ItemBatch::new(items.to_vec(), attrs, ctx)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &ItemBatch) -> Result<ItemBatch> {
        let stack = |a: &Tensor, b: &Tensor| -> Result<Tensor> {
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Ok(Tensor::from_vec(a.rows() + b.rows(), a.cols(), data)?)
        };
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        ItemBatch::new(
            ids,
            stack(&self.attributes, &other.attributes)?,
            stack(&self.contexts, &other.contexts)?,
        )
    }
}

/// Item ids ordered by descending frequency, ties by ascending id.
pub fn rank_by_frequency(freq: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..freq.len()).collect();
    order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    order
}

#[derive(Clone, Debug)]
pub enum ItemEncoder {
    FullTable(FullTableEncoder),
    Unknown(UnknownTokenWrapper),
    Pir(PirEncoder),
}

impl ItemEncoder {
    /// `train_freq` is the per-item occurrence count on the training split.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        config: &ModelConfig,
        dims: &DataDims,
        train_freq: &[u64],
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match config.encoder {
            EncoderKind::FullTable => ItemEncoder::FullTable(FullTableEncoder::new(store, config, dims, None, rng)?),
            EncoderKind::Unknown => ItemEncoder::Unknown(UnknownTokenWrapper::new(
                store,
                config,
                dims,
                train_freq,
                config.removal_ratio,
                rng,
            )?),
            EncoderKind::Pir => ItemEncoder::Pir(PirEncoder::new(store, config, dims, train_freq, rng)?),
        })
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            ItemEncoder::FullTable(_) => EncoderKind::FullTable,
            ItemEncoder::Unknown(_) => EncoderKind::Unknown,
            ItemEncoder::Pir(_) => EncoderKind::Pir,
        }
    }

    /// `n x d` item vectors.
    pub fn encode(&self, g: &mut Graph<'_>, batch: &ItemBatch) -> Result<Var> {
        match self {
            ItemEncoder::FullTable(e) => e.encode(g, batch),
            ItemEncoder::Unknown(e) => e.inner.encode(g, batch),
            ItemEncoder::Pir(e) => e.encode(g, batch),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            ItemEncoder::FullTable(e) => e.param_ids(),
            ItemEncoder::Unknown(e) => e.inner.param_ids(),
            ItemEncoder::Pir(e) => e.param_ids(),
        }
    }

    /// Trainable scalars actually allocated for this encoder.
    pub fn count_parameters(&self, store: &ParamStore) -> usize {
        store.scalar_count_of(&self.param_ids())
    }

    /// Parameter count assembled from the configured dimensions alone.
    pub fn closed_form_count(&self) -> usize {
        match self {
            ItemEncoder::FullTable(e) => e.closed_form_count(),
            ItemEncoder::Unknown(e) => e.inner.closed_form_count(),
            ItemEncoder::Pir(e) => e.closed_form_count(),
        }
    }

    /// Scalars in the item-specific part: the look-up table, or the proxy
    /// bank (proxies plus frequent-item biases).
    pub fn embedding_scalars(&self) -> usize {
        match self {
            ItemEncoder::FullTable(e) => e.table_rows() * e.d_ie,
            ItemEncoder::Unknown(e) => e.inner.table_rows() * e.inner.d_ie,
            ItemEncoder::Pir(e) => e.bank.scalar_count(),
        }
    }

    pub fn as_pir(&self) -> Option<&PirEncoder> {
        match self {
            ItemEncoder::Pir(e) => Some(e),
            _ => None,
        }
    }
}
