use std::collections::BTreeSet;

use rand::Rng;

use super::ItemBatch;
use crate::error::{Error, Result};
use crate::model::{DataDims, ModelConfig};
use crate::nn::{Activation, Linear};
use crate::tensor::{Graph, ParamId, ParamStore, Var};

/// Baseline encoder with one embedding row per item:
/// `z = act_ac([f, c] W_ac + b_ac)`, `v = act_item([IE_i, z] W_item + b_item)`.
#[derive(Clone, Debug)]
pub struct FullTableEncoder {
    pub table: ParamId,
    pub ac: Linear,
    pub item: Linear,
    pub act_ac: Activation,
    pub act_item: Activation,
    pub item_count: usize,
    pub d_ie: usize,
    /// Item id -> table row; `None` means the identity map.
    row_of: Option<Vec<usize>>,
    rows: usize,
}

impl FullTableEncoder {
    pub(crate) fn new<R: Rng>(
        store: &mut ParamStore,
        config: &ModelConfig,
        dims: &DataDims,
        row_of: Option<(Vec<usize>, usize)>,
        rng: &mut R,
    ) -> Result<Self> {
        let d_ie = config.d_ie();
        let (row_of, rows) = match row_of {
            Some((map, rows)) => (Some(map), rows),
            None => (None, dims.item_count),
        };
        let table = store.add_weight("item.table", rows, d_ie, rng)?;
        store.mark_row_sparse(table);
        let ac = Linear::new(store, "item.ac", dims.attr_dim + dims.ctx_dim, config.d_ac(), rng)?;
        let item = Linear::new(store, "item.out", d_ie + config.d_ac(), config.d, rng)?;
        Ok(FullTableEncoder {
            table,
            ac,
            item,
            act_ac: config.activation_ac,
            act_item: config.activation_item,
            item_count: dims.item_count,
            d_ie,
            row_of,
            rows,
        })
    }

    pub fn table_rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, item: usize) -> Result<usize> {
        if item >= self.item_count {
            return Err(Error::Lookup {
                item,
                catalog: self.item_count,
            });
        }
        Ok(self.row_of.as_ref().map_or(item, |m| m[item]))
    }

    pub fn encode(&self, g: &mut Graph<'_>, batch: &ItemBatch) -> Result<Var> {
        let rows = batch
            .ids
            .iter()
            .map(|&i| self.row(i).map(Some))
            .collect::<Result<Vec<_>>>()?;
        let f = g.constant(batch.attributes.clone())?;
        let c = g.constant(batch.contexts.clone())?;
        let fc = g.concat_cols(&[f, c])?;
        let z = self.ac.forward(g, fc)?;
        let z = self.act_ac.apply(g, z)?;
        let table = g.param(self.table);
        let ie = g.gather_rows(table, &rows)?;
        let h = g.concat_cols(&[ie, z])?;
        let v = self.item.forward(g, h)?;
        Ok(self.act_item.apply(g, v)?)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.table];
        ids.extend(self.ac.params());
        ids.extend(self.item.params());
        ids
    }

    pub fn closed_form_count(&self) -> usize {
        let (d_in, d_ac, d) = (self.ac.fan_in, self.ac.fan_out, self.item.fan_out);
        self.rows * self.d_ie + d_in * d_ac + d_ac + (self.d_ie + d_ac) * d + d
    }
}

/// Full-table baseline whose least frequent items share one unknown row.
#[derive(Clone, Debug)]
pub struct UnknownTokenWrapper {
    pub inner: FullTableEncoder,
    pub replaced: BTreeSet<usize>,
    pub removal_ratio: f64,
}

impl UnknownTokenWrapper {
    pub(crate) fn new<R: Rng>(
        store: &mut ParamStore,
        config: &ModelConfig,
        dims: &DataDims,
        train_freq: &[u64],
        removal_ratio: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let replaced = least_frequent(train_freq, removal_ratio)?;
        let mut row_of = vec![0; dims.item_count];
        let mut next = 0;
        for (i, slot) in row_of.iter_mut().enumerate() {
            if !replaced.contains(&i) {
                *slot = next;
                next += 1;
            }
        }
        if !replaced.is_empty() {
            for &i in &replaced {
                row_of[i] = next;
            }
            next += 1;
        }
        let inner = FullTableEncoder::new(store, config, dims, Some((row_of, next)), rng)?;
        Ok(UnknownTokenWrapper {
            inner,
            replaced,
            removal_ratio,
        })
    }
}

/// The `floor(ratio * |I|)` least frequent items, ties by ascending id.
pub fn least_frequent(train_freq: &[u64], ratio: f64) -> Result<BTreeSet<usize>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("removal ratio {ratio} outside [0, 1]")));
    }
    let n = (ratio * train_freq.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..train_freq.len()).collect();
    order.sort_by(|&a, &b| train_freq[a].cmp(&train_freq[b]).then(a.cmp(&b)));
    Ok(order.into_iter().take(n).collect())
}
