use std::collections::HashMap;
use std::io::Write;

use rand::Rng;

use super::{rank_by_frequency, ItemBatch};
use crate::error::{Error, Result};
use crate::model::{DataDims, ModelConfig};
use crate::nn::{Activation, Linear, LEAKY_SLOPE};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Learnable proxies plus per-item logit biases for the most frequent items.
#[derive(Clone, Debug)]
pub struct ProxyBank {
    /// `n_proxy x d_proxy`.
    pub proxies: ParamId,
    /// `K x n_proxy`, zero at init; absent when `K = 0`.
    pub freq_bias: Option<ParamId>,
    pub freq_index: HashMap<usize, usize>,
    pub n_proxy: usize,
    pub d_proxy: usize,
}

impl ProxyBank {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        n_proxy: usize,
        d_proxy: usize,
        train_freq: &[u64],
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let proxies = store.add_weight("pir.proxies", n_proxy, d_proxy, rng)?;
        let top: Vec<usize> = rank_by_frequency(train_freq).into_iter().take(k).collect();
        let freq_bias = if top.is_empty() {
            None
        } else {
            let id = store.add("pir.freq_bias", Tensor::zeros(top.len(), n_proxy), true)?;
            store.mark_row_sparse(id);
            Some(id)
        };
        let freq_index = top.into_iter().enumerate().map(|(row, item)| (item, row)).collect();
        Ok(ProxyBank {
            proxies,
            freq_bias,
            freq_index,
            n_proxy,
            d_proxy,
        })
    }

    pub fn k(&self) -> usize {
        self.freq_index.len()
    }

    pub fn scalar_count(&self) -> usize {
        self.n_proxy * self.d_proxy + self.k() * self.n_proxy
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.proxies];
        ids.extend(self.freq_bias);
        ids
    }
}

/// Proxy-based item representation:
/// `w = phi([f, c]) (+ b_freq)`, `PIR = softmax(w) P`,
/// `f' = act_a(f W_a + b_a)`, `z = act_ac([f', c] W_ac + b_ac)`,
/// `v = act_item([PIR, z] W_item + b_item)`.
#[derive(Clone, Debug)]
pub struct PirEncoder {
    pub bank: ProxyBank,
    pub phi1: Linear,
    pub phi2: Linear,
    pub attr: Linear,
    pub ac: Linear,
    pub item: Linear,
    pub act_attr: Activation,
    pub act_ac: Activation,
    pub act_item: Activation,
    pub attr_dim: usize,
    pub ctx_dim: usize,
}

impl PirEncoder {
    pub(crate) fn new<R: Rng>(
        store: &mut ParamStore,
        config: &ModelConfig,
        dims: &DataDims,
        train_freq: &[u64],
        rng: &mut R,
    ) -> Result<Self> {
        let d_in = dims.attr_dim + dims.ctx_dim;
        let (n_proxy, d_proxy, d_phi) = (config.n_proxy, config.d_proxy(), config.d_phi());
        let removed = super::full_table::least_frequent(train_freq, config.removal_ratio)?.len();
        let k = config.k_frequent.min(dims.item_count - removed);
        let bank = ProxyBank::new(store, n_proxy, d_proxy, train_freq, k, rng)?;
        let phi1 = Linear::new(store, "pir.phi1", d_in, d_phi, rng)?;
        let phi2 = Linear::new(store, "pir.phi2", d_phi, n_proxy, rng)?;
        let attr = Linear::new(store, "pir.attr", dims.attr_dim, config.d_attr(), rng)?;
        let ac = Linear::new(store, "pir.ac", config.d_attr() + dims.ctx_dim, config.d_ac(), rng)?;
        let item = Linear::new(store, "pir.out", d_proxy + config.d_ac(), config.d, rng)?;
        Ok(PirEncoder {
            bank,
            phi1,
            phi2,
            attr,
            ac,
            item,
            act_attr: config.activation_attr,
            act_ac: config.activation_ac,
            act_item: config.activation_item,
            attr_dim: dims.attr_dim,
            ctx_dim: dims.ctx_dim,
        })
    }

    fn check_dims(&self, attributes: &Tensor, contexts: &Tensor) -> Result<()> {
        if attributes.cols() != self.attr_dim || contexts.cols() != self.ctx_dim || attributes.rows() != contexts.rows() {
            return Err(Error::Config(format!(
                "encoder expects attribute dim {} and context dim {}, got {:?} and {:?}",
                self.attr_dim,
                self.ctx_dim,
                attributes.shape(),
                contexts.shape()
            )));
        }
        Ok(())
    }

    /// Unnormalized proxy logits; frequent-item biases are added for `ids`.
    pub fn proxy_logits(
        &self,
        g: &mut Graph<'_>,
        attributes: &Tensor,
        contexts: &Tensor,
        ids: Option<&[usize]>,
    ) -> Result<Var> {
        self.check_dims(attributes, contexts)?;
        let f = g.constant(attributes.clone())?;
        let c = g.constant(contexts.clone())?;
        let fc = g.concat_cols(&[f, c])?;
        let h = self.phi1.forward(g, fc)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE)?;
        let w = self.phi2.forward(g, h)?;
        match (ids, self.bank.freq_bias) {
            (Some(ids), Some(bias)) => {
                let rows: Vec<Option<usize>> = ids.iter().map(|i| self.bank.freq_index.get(i).copied()).collect();
                if rows.iter().all(Option::is_none) {
                    return Ok(w);
                }
                let b = g.param(bias);
                let b = g.gather_rows(b, &rows)?;
                Ok(g.add(w, b)?)
            }
            _ => Ok(w),
        }
    }

    /// `n x n_proxy` rows on the probability simplex.
    pub fn proxy_weights_var(
        &self,
        g: &mut Graph<'_>,
        attributes: &Tensor,
        contexts: &Tensor,
        ids: Option<&[usize]>,
    ) -> Result<Var> {
        let w = self.proxy_logits(g, attributes, contexts, ids)?;
        Ok(g.softmax_rows(w)?)
    }

    /// `n x d_proxy` convex combinations of proxies.
    pub fn pir_var(&self, g: &mut Graph<'_>, attributes: &Tensor, contexts: &Tensor, ids: Option<&[usize]>) -> Result<Var> {
        let w = self.proxy_weights_var(g, attributes, contexts, ids)?;
        let p = g.param(self.bank.proxies);
        Ok(g.matmul(w, p)?)
    }

    pub fn encode(&self, g: &mut Graph<'_>, batch: &ItemBatch) -> Result<Var> {
        let pir = self.pir_var(g, &batch.attributes, &batch.contexts, Some(&batch.ids))?;
        let f = g.constant(batch.attributes.clone())?;
        let c = g.constant(batch.contexts.clone())?;
        let f = self.attr.forward(g, f)?;
        let f = self.act_attr.apply(g, f)?;
        let fc = g.concat_cols(&[f, c])?;
        let z = self.ac.forward(g, fc)?;
        let z = self.act_ac.apply(g, z)?;
        let h = g.concat_cols(&[pir, z])?;
        let v = self.item.forward(g, h)?;
        Ok(self.act_item.apply(g, v)?)
    }

    /// Evaluates proxy weights outside of any training graph.
    pub fn proxy_weights(
        &self,
        store: &ParamStore,
        attributes: &Tensor,
        contexts: &Tensor,
        ids: Option<&[usize]>,
    ) -> Result<Tensor> {
        let mut g = Graph::with_params(store);
        let w = self.proxy_weights_var(&mut g, attributes, contexts, ids)?;
        Ok(g.value(w).clone())
    }

    pub fn pir_vectors(
        &self,
        store: &ParamStore,
        attributes: &Tensor,
        contexts: &Tensor,
        ids: Option<&[usize]>,
    ) -> Result<Tensor> {
        let mut g = Graph::with_params(store);
        let p = self.pir_var(&mut g, attributes, contexts, ids)?;
        Ok(g.value(p).clone())
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.bank.param_ids();
        for l in [&self.phi1, &self.phi2, &self.attr, &self.ac, &self.item] {
            ids.extend(l.params());
        }
        ids
    }

    pub fn closed_form_count(&self) -> usize {
        let (n, dp, k) = (self.bank.n_proxy, self.bank.d_proxy, self.bank.k());
        let (d_a, d_c) = (self.attr_dim, self.ctx_dim);
        let d_phi = self.phi1.fan_out;
        let d_a2 = self.attr.fan_out;
        let d_ac = self.ac.fan_out;
        let d = self.item.fan_out;
        n * dp
            + k * n
            + (d_a + d_c) * d_phi
            + d_phi
            + d_phi * n
            + n
            + d_a * d_a2
            + d_a2
            + (d_a2 + d_c) * d_ac
            + d_ac
            + (dp + d_ac) * d
            + d
    }
}

/// Writes `item_id<TAB>w1,...,wn` lines.
pub fn write_proxy_weights<W: Write>(mut out: W, ids: &[usize], weights: &Tensor) -> Result<()> {
    if ids.len() != weights.rows() {
        return Err(Error::Config(format!("{} ids for {} weight rows", ids.len(), weights.rows())));
    }
    for (r, id) in ids.iter().enumerate() {
        let row: Vec<String> = weights.row(r).iter().map(|w| w.to_string()).collect();
        writeln!(out, "{id}\t{}", row.join(","))?;
    }
    Ok(())
}
