//! Full recommender: item encoder, sequence encoder and scorer.

use serde::{Deserialize, Serialize};

use crate::data::{ContextVector, InteractionDataset, CONTEXT_DIM};
use crate::encoder::{EncoderKind, ItemBatch, ItemEncoder};
use crate::error::{Error, Result};
use crate::nn::{Activation, NormKind};
use crate::rng::stream;
use crate::scorer::{bce_loss, lip_loss, score_inner_product, CrossAttentionScorer, ScorerKind};
use crate::seq::{SeqConfig, SeqEncoder};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

const INIT_STREAM: u64 = 0x1417;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    /// Share of least frequent items collapsed onto the unknown row
    /// (`unknown` encoder) or denied a frequent-item bias (`pir`).
    pub removal_ratio: f64,
    pub d: usize,
    /// Most recent history events fed to the sequence encoder.
    pub max_len: usize,
    pub d_ie: Option<usize>,
    /// Width of the attribute projection `f'`.
    pub d_attr: Option<usize>,
    pub d_ac: Option<usize>,
    /// Hidden width of the proxy weighting network.
    pub d_phi: Option<usize>,
    pub n_proxy: usize,
    pub d_proxy: Option<usize>,
    /// Number of most frequent items that get a proxy-logit bias row.
    pub k_frequent: usize,
    pub blocks: usize,
    pub heads: usize,
    pub norm: NormKind,
    pub activation_attr: Activation,
    pub activation_ac: Activation,
    pub activation_item: Activation,
    pub activation_ff: Activation,
    pub dropout: f64,
    pub causal: bool,
    pub scorer: ScorerKind,
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderKind::Pir,
            removal_ratio: 0.0,
            d: 256,
            max_len: 50,
            d_ie: None,
            d_attr: None,
            d_ac: None,
            d_phi: None,
            n_proxy: 128,
            d_proxy: None,
            k_frequent: 100,
            blocks: 2,
            heads: 4,
            norm: NormKind::LayerNorm,
            activation_attr: Activation::LeakyRelu,
            activation_ac: Activation::LeakyRelu,
            activation_item: Activation::LeakyRelu,
            activation_ff: Activation::LeakyRelu,
            dropout: 0.1,
            causal: false,
            scorer: ScorerKind::ContrastiveCa,
            temperature: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn d_ie(&self) -> usize {
        self.d_ie.unwrap_or(self.d)
    }

    pub fn d_attr(&self) -> usize {
        self.d_attr.unwrap_or(self.d)
    }

    pub fn d_ac(&self) -> usize {
        self.d_ac.unwrap_or(self.d)
    }

    pub fn d_phi(&self) -> usize {
        self.d_phi.unwrap_or(self.d)
    }

    pub fn d_proxy(&self) -> usize {
        self.d_proxy.unwrap_or(self.d)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d", self.d),
            ("d_ie", self.d_ie()),
            ("d_attr", self.d_attr()),
            ("d_ac", self.d_ac()),
            ("d_phi", self.d_phi()),
            ("d_proxy", self.d_proxy()),
            ("n_proxy", self.n_proxy),
            ("heads", self.heads),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("heads ({}) must divide d ({})", self.heads, self.d)));
        }
        if !(0.0..=1.0).contains(&self.removal_ratio) {
            return Err(Error::Config(format!("removal_ratio {} outside [0, 1]", self.removal_ratio)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }

    fn seq_config(&self) -> SeqConfig {
        SeqConfig {
            d: self.d,
            heads: self.heads,
            blocks: self.blocks,
            norm: self.norm,
            activation_ff: self.activation_ff,
            dropout: self.dropout,
            causal: self.causal,
        }
    }
}

/// Sizes fixed by the data rather than the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataDims {
    pub item_count: usize,
    pub attr_dim: usize,
    pub ctx_dim: usize,
}

impl DataDims {
    pub fn of(dataset: &InteractionDataset) -> Self {
        DataDims {
            item_count: dataset.item_count(),
            attr_dim: dataset.attribute_dim(),
            ctx_dim: CONTEXT_DIM,
        }
    }
}

/// One user's step: history rows followed by candidates, positive first.
#[derive(Clone, Debug)]
pub struct UserInput {
    pub history: ItemBatch,
    /// `false` marks padding rows of `history`.
    pub valid: Option<Vec<bool>>,
    pub candidates: ItemBatch,
}

impl UserInput {
    /// Candidates all take `target_context`.
    pub fn assemble(
        dataset: &InteractionDataset,
        history: &[usize],
        history_contexts: &[ContextVector],
        candidates: &[usize],
        target_context: ContextVector,
    ) -> Result<Self> {
        Ok(UserInput {
            history: ItemBatch::from_dataset(dataset, history, history_contexts)?,
            valid: None,
            candidates: ItemBatch::from_dataset(dataset, candidates, &vec![target_context; candidates.len()])?,
        })
    }

    /// History is the last `max_len` events of `user` before `end`; the
    /// candidates share the context of event `target`.
    pub fn from_events(
        dataset: &InteractionDataset,
        user: usize,
        end: usize,
        target: usize,
        candidates: &[usize],
        max_len: usize,
    ) -> Result<Self> {
        let start = end.saturating_sub(max_len);
        let events = &dataset.sequences[user][start..end];
        let items: Vec<usize> = events.iter().map(|e| e.item).collect();
        UserInput::assemble(
            dataset,
            &items,
            &dataset.contexts[user][start..end],
            candidates,
            dataset.contexts[user][target],
        )
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub dims: DataDims,
    pub encoder: ItemEncoder,
    pub seq: SeqEncoder,
    pub cross: Option<CrossAttentionScorer>,
    pub store: ParamStore,
}

impl Model {
    pub fn new(config: &ModelConfig, dims: DataDims, train_freq: &[u64], seed: u64) -> Result<Self> {
        config.validate()?;
        if train_freq.len() != dims.item_count {
            return Err(Error::Config(format!(
                "{} frequencies for {} items",
                train_freq.len(),
                dims.item_count
            )));
        }
        let mut rng = stream(seed, &[INIT_STREAM]);
        let mut store = ParamStore::new();
        let encoder = ItemEncoder::new(&mut store, config, &dims, train_freq, &mut rng)?;
        let seq = SeqEncoder::new(&mut store, &config.seq_config(), &mut rng)?;
        let cross = if config.scorer.uses_cross_attention() {
            Some(CrossAttentionScorer::new(&mut store, config.d, config.heads, &mut rng)?)
        } else {
            None
        };
        Ok(Model {
            config: config.clone(),
            dims,
            encoder,
            seq,
            cross,
            store,
        })
    }

    pub fn for_dataset(config: &ModelConfig, dataset: &InteractionDataset, seed: u64) -> Result<Self> {
        Model::new(config, DataDims::of(dataset), &dataset.train_frequencies(), seed)
    }

    /// `1 x n` candidate scores.
    pub fn scores_var(&self, g: &mut Graph<'_>, input: &UserInput) -> Result<Var> {
        let l = input.history.len();
        let n = input.candidates.len();
        if l == 0 || n == 0 {
            return Err(Error::Config("empty history or candidate set".into()));
        }
        let all = input.history.concat(&input.candidates)?;
        let v = self.encoder.encode(g, &all)?;
        let hist = g.slice_rows(v, 0, l)?;
        let cands = g.slice_rows(v, l, n)?;
        let valid = input.valid.as_deref();
        let latents = self.seq.encode(g, hist, valid)?;
        match self.config.scorer {
            ScorerKind::IpBce | ScorerKind::IpNtXent => {
                let last = valid.map_or(l - 1, |m| m.iter().rposition(|&b| b).unwrap_or(l - 1));
                let u = g.slice_rows(latents, last, 1)?;
                let t = (self.config.scorer == ScorerKind::IpNtXent).then_some(self.config.temperature);
                score_inner_product(g, u, cands, t)
            }
            ScorerKind::CrossAttention | ScorerKind::ContrastiveCa => {
                let ca = self.cross.as_ref().expect("cross-attention scorer present");
                ca.score(g, latents, cands, valid)
            }
        }
    }

    /// Per-user training loss.
    pub fn loss_var(&self, g: &mut Graph<'_>, input: &UserInput) -> Result<Var> {
        let y = self.scores_var(g, input)?;
        match self.config.scorer {
            ScorerKind::IpBce => {
                let mut labels = vec![0.0; input.candidates.len()];
                labels[0] = 1.0;
                bce_loss(g, y, &labels)
            }
            ScorerKind::IpNtXent | ScorerKind::CrossAttention => lip_loss(g, y, None),
            ScorerKind::ContrastiveCa => lip_loss(g, y, Some(self.config.temperature)),
        }
    }

    /// Inference scores, dropout off.
    pub fn score(&self, input: &UserInput) -> Result<Vec<f64>> {
        let mut g = Graph::with_params(&self.store);
        let y = self.scores_var(&mut g, input)?;
        Ok(g.value(y).data().to_vec())
    }

    pub fn encode_items(&self, batch: &ItemBatch) -> Result<Tensor> {
        let mut g = Graph::with_params(&self.store);
        let v = self.encoder.encode(&mut g, batch)?;
        Ok(g.value(v).clone())
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder.count_parameters(&self.store)
    }
}
