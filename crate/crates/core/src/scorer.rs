//! Candidate scoring against a latent sequence, and the training losses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::seq::MultiHeadAttention;
use crate::tensor::{Graph, ParamId, ParamStore, TensorError, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    /// Inner product trained as binary classification.
    IpBce,
    /// Cosine similarity over temperature, trained as `(N+1)`-way softmax.
    IpNtXent,
    /// Cross-attention with plain softmax cross-entropy.
    CrossAttention,
    /// Cross-attention with temperature-scaled softmax cross-entropy.
    #[default]
    ContrastiveCa,
}

impl ScorerKind {
    pub fn uses_cross_attention(self) -> bool {
        matches!(self, ScorerKind::CrossAttention | ScorerKind::ContrastiveCa)
    }
}

/// `Y_j = <u, v_j>`, or `cos(u, v_j) / tau` when `temperature` is given.
/// `u` is `1 x d`, `candidates` is `n x d`; returns `1 x n`.
pub fn score_inner_product(g: &mut Graph<'_>, u: Var, candidates: Var, temperature: Option<f64>) -> Result<Var> {
    let (u, c) = match temperature {
        None => (u, candidates),
        Some(t) if t > 0.0 => {
            let u = g.l2_normalize_rows(u)?;
            let c = g.l2_normalize_rows(candidates)?;
            let u = g.scale(u, 1.0 / t)?;
            (u, c)
        }
        Some(t) => return Err(Error::Config(format!("temperature {t} must be positive"))),
    };
    let ct = g.transpose(c)?;
    Ok(g.matmul(u, ct)?)
}

/// `C' = C * MHA(C, V, V)` then `Y = C' W + b`.
#[derive(Clone, Debug)]
pub struct CrossAttentionScorer {
    pub mha: MultiHeadAttention,
    pub out: Linear,
}

impl CrossAttentionScorer {
    pub fn new<R: Rng>(store: &mut ParamStore, d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Ok(CrossAttentionScorer {
            mha: MultiHeadAttention::new(store, "score.mha", d, heads, rng)?,
            out: Linear::new(store, "score.out", d, 1, rng)?,
        })
    }

    /// `latents` is `L x d`, `candidates` is `n x d`; returns `1 x n`.
    /// `valid` masks padded latent rows.
    pub fn score(&self, g: &mut Graph<'_>, latents: Var, candidates: Var, valid: Option<&[bool]>) -> Result<Var> {
        let (l, _) = g.shape(latents);
        if l == 0 {
            return Err(TensorError::Contract("empty latent sequence".into()).into());
        }
        let (n, _) = g.shape(candidates);
        let keep = valid.map(|m| (0..n).flat_map(|_| m.iter().copied()).collect::<Vec<_>>());
        let att = self.mha.forward(g, candidates, latents, keep.as_deref())?;
        let c = g.mul(candidates, att)?;
        let y = self.out.forward(g, c)?;
        Ok(g.transpose(y)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = self.mha.params();
        ids.extend(self.out.params());
        ids
    }
}

/// Softmax cross-entropy with the positive in column 0, averaged over rows.
pub fn lip_loss(g: &mut Graph<'_>, scores: Var, temperature: Option<f64>) -> Result<Var> {
    let (rows, cols) = g.shape(scores);
    if cols < 2 {
        return Err(TensorError::Contract(format!("{cols} candidate scores; need at least 2")).into());
    }
    let scores = match temperature {
        None => scores,
        Some(t) if t > 0.0 => g.scale(scores, 1.0 / t)?,
        Some(t) => return Err(Error::Config(format!("temperature {t} must be positive"))),
    };
    Ok(g.softmax_cross_entropy(scores, &vec![0; rows])?)
}

/// Mean logistic loss in logit space.
pub fn bce_loss(g: &mut Graph<'_>, scores: Var, labels: &[f64]) -> Result<Var> {
    Ok(g.bce_with_logits(scores, labels)?)
}
