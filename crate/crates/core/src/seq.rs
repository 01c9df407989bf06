//! Stacked multi-head self-attention over item vectors, without positional
//! embeddings.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Linear, Norm, NormKind};
use crate::tensor::{Graph, ParamId, ParamStore, TensorError, Var};

/// `softmax(Q K^T / sqrt(d_k)) V`. `keep` is a row-major `L_q x L_k` mask;
/// dropped entries get a logit of minus infinity.
pub fn attention(g: &mut Graph<'_>, q: Var, k: Var, v: Var, keep: Option<&[bool]>) -> Result<Var> {
    let (_, dq) = g.shape(q);
    let (lk, dk) = g.shape(k);
    let (lv, _) = g.shape(v);
    if dq != dk || lk != lv {
        return Err(Error::Config(format!(
            "attention shapes: q {:?}, k {:?}, v {:?}",
            g.shape(q),
            g.shape(k),
            g.shape(v)
        )));
    }
    let kt = g.transpose(k)?;
    let logits = g.matmul(q, kt)?;
    let logits = g.scale(logits, 1.0 / (dk as f64).sqrt())?;
    let w = g.masked_softmax_rows(logits, keep)?;
    Ok(g.matmul(w, v)?)
}

/// Per-head projections `W_h^{Q,K,V}` of size `d x d/H`; the head outputs
/// are concatenated without a further projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: Vec<[ParamId; 3]>,
    pub d: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!("{heads} heads do not divide d = {d}")));
        }
        let dh = d / heads;
        let heads = (0..heads)
            .map(|h| {
                Ok([
                    store.add_weight(format!("{name}.h{h}.query"), d, dh, rng)?,
                    store.add_weight(format!("{name}.h{h}.key"), d, dh, rng)?,
                    store.add_weight(format!("{name}.h{h}.value"), d, dh, rng)?,
                ])
            })
            .collect::<Result<Vec<_>, TensorError>>()?;
        Ok(MultiHeadAttention { heads, d })
    }

    /// Queries from `q`, keys and values from `kv`.
    pub fn forward(&self, g: &mut Graph<'_>, q: Var, kv: Var, keep: Option<&[bool]>) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.heads.len());
        for &[wq, wk, wv] in &self.heads {
            let (wq, wk, wv) = (g.param(wq), g.param(wk), g.param(wv));
            let qh = g.matmul(q, wq)?;
            let kh = g.matmul(kv, wk)?;
            let vh = g.matmul(kv, wv)?;
            outs.push(attention(g, qh, kh, vh, keep)?);
        }
        Ok(g.concat_cols(&outs)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.heads.iter().flatten().copied().collect()
    }
}

#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub mha: MultiHeadAttention,
    pub norm: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub act_ff: Activation,
    pub dropout: f64,
}

impl AttentionBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, config: &SeqConfig, rng: &mut R) -> Result<Self> {
        Ok(AttentionBlock {
            mha: MultiHeadAttention::new(store, &format!("{name}.mha"), config.d, config.heads, rng)?,
            norm: Norm::new(store, &format!("{name}.norm"), config.norm, config.d)?,
            ff1: Linear::new(store, &format!("{name}.ff1"), config.d, config.d, rng)?,
            ff2: Linear::new(store, &format!("{name}.ff2"), config.d, config.d, rng)?,
            act_ff: config.activation_ff,
            dropout: config.dropout,
        })
    }

    /// `A = dropout(MHA(n, n, n))` with `n = norm(x)`, then
    /// `dropout(PWFF(A)) + A`.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, keep: Option<&[bool]>) -> Result<Var> {
        let n = self.norm.forward(g, x)?;
        let a = self.mha.forward(g, n, n, keep)?;
        let a = g.dropout(a, self.dropout)?;
        let h = self.ff1.forward(g, a)?;
        let h = self.act_ff.apply(g, h)?;
        let h = self.ff2.forward(g, h)?;
        let h = g.dropout(h, self.dropout)?;
        Ok(g.add(h, a)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = self.mha.params();
        ids.extend(self.norm.params());
        ids.extend(self.ff1.params());
        ids.extend(self.ff2.params());
        ids
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeqConfig {
    pub d: usize,
    pub heads: usize,
    pub blocks: usize,
    pub norm: NormKind,
    pub activation_ff: Activation,
    pub dropout: f64,
    pub causal: bool,
}

#[derive(Clone, Debug)]
pub struct SeqEncoder {
    pub blocks: Vec<AttentionBlock>,
    pub causal: bool,
}

impl SeqEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, config: &SeqConfig, rng: &mut R) -> Result<Self> {
        let blocks = (0..config.blocks)
            .map(|b| AttentionBlock::new(store, &format!("seq.block{b}"), config, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(SeqEncoder {
            blocks,
            causal: config.causal,
        })
    }

    /// Latent sequence vectors for an `L x d` input. `valid[r] == false`
    /// marks padding rows, which are never attended to.
    pub fn encode(&self, g: &mut Graph<'_>, v: Var, valid: Option<&[bool]>) -> Result<Var> {
        let (l, _) = g.shape(v);
        if l == 0 {
            return Err(TensorError::Contract("empty sequence".into()).into());
        }
        if let Some(m) = valid {
            if m.len() != l {
                return Err(Error::Config(format!("mask of length {} for {l} rows", m.len())));
            }
        }
        let keep = self.key_mask(l, valid);
        let mut x = v;
        for block in &self.blocks {
            x = block.forward(g, x, keep.as_deref())?;
        }
        Ok(x)
    }

    fn key_mask(&self, l: usize, valid: Option<&[bool]>) -> Option<Vec<bool>> {
        if valid.is_none() && !self.causal {
            return None;
        }
        let mut keep = vec![true; l * l];
        for r in 0..l {
            for c in 0..l {
                let key_ok = valid.is_none_or(|m| m[c]);
                keep[r * l + c] = key_ok && (!self.causal || c <= r);
            }
        }
        Some(keep)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(AttentionBlock::params).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_key_returns_its_value() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::row_vector(vec![0.3, -0.2])).unwrap();
        let k = g.constant(Tensor::row_vector(vec![0.3, -0.2])).unwrap();
        let v = g.constant(Tensor::row_vector(vec![4.0, 5.0, 6.0])).unwrap();
        let out = attention(&mut g, q, k, v, None).unwrap();
        assert_eq!(g.value(out).data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::row_vector(vec![1.0, 2.0])).unwrap();
        let k = g.constant(Tensor::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap()).unwrap();
        let v = g.constant(Tensor::from_rows(&[[1.0, 3.0], [3.0, 7.0]]).unwrap()).unwrap();
        let out = attention(&mut g, q, k, v, None).unwrap();
        let o = g.value(out);
        assert!((o.get(0, 0) - 2.0).abs() < 1e-15 && (o.get(0, 1) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn attention_matches_direct_loop() {
        let mut rng = stream(11, &[]);
        let (qt, kt, vt) = (random(3, 4, &mut rng), random(5, 4, &mut rng), random(5, 2, &mut rng));
        let mut g = Graph::new();
        let (q, k, v) = (
            g.constant(qt.clone()).unwrap(),
            g.constant(kt.clone()).unwrap(),
            g.constant(vt.clone()).unwrap(),
        );
        let out = attention(&mut g, q, k, v, None).unwrap();
        for i in 0..3 {
            let logits: Vec<f64> = (0..5)
                .map(|j| (0..4).map(|c| qt.get(i, c) * kt.get(j, c)).sum::<f64>() / 2.0)
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for c in 0..2 {
                let expect: f64 = (0..5).map(|j| logits[j].exp() / z * vt.get(j, c)).sum();
                assert!((g.value(out).get(i, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_dims_are_config_errors() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros(1, 3)).unwrap();
        let k = g.constant(Tensor::zeros(2, 4)).unwrap();
        let v = g.constant(Tensor::zeros(2, 4)).unwrap();
        assert!(matches!(attention(&mut g, q, k, v, None), Err(Error::Config(_))));
    }

    #[test]
    fn heads_must_divide_d() {
        let mut store = ParamStore::new();
        let mut rng = stream(0, &[]);
        assert!(MultiHeadAttention::new(&mut store, "m", 6, 4, &mut rng).is_err());
    }

    #[test]
    fn empty_sequence_is_contract_error() {
        let cfg = SeqConfig {
            d: 4,
            heads: 2,
            blocks: 1,
            norm: NormKind::LayerNorm,
            activation_ff: Activation::LeakyRelu,
            dropout: 0.0,
            causal: false,
        };
        let mut store = ParamStore::new();
        let enc = SeqEncoder::new(&mut store, &cfg, &mut stream(0, &[])).unwrap();
        let mut g = Graph::with_params(&store);
        let v = g.constant(Tensor::zeros(0, 4)).unwrap();
        assert!(matches!(
            enc.encode(&mut g, v, None),
            Err(Error::Tensor(TensorError::Contract(_)))
        ));
    }
}
