//! Small building blocks shared by the encoders and scorers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, ParamId, ParamStore, TensorError, Var};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    #[default]
    LeakyRelu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, g: &mut Graph<'_>, x: Var) -> Result<Var, TensorError> {
        match self {
            Activation::Identity => Ok(x),
            Activation::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    LayerNorm,
    L2Norm,
}

/// `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        Ok(Linear {
            weight: store.add_weight(format!("{name}.weight"), fan_in, fan_out, rng)?,
            bias: store.add_bias(format!("{name}.bias"), fan_out)?,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var, TensorError> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let h = g.matmul(x, w)?;
        g.add(h, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    pub fn scalar_count(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

/// Row normalization with an optional learned affine part (layer norm only).
#[derive(Clone, Debug)]
pub struct Norm {
    pub kind: NormKind,
    pub affine: Option<(ParamId, ParamId)>,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, kind: NormKind, dim: usize) -> Result<Self, TensorError> {
        let affine = match kind {
            NormKind::LayerNorm => Some((
                store.add(format!("{name}.gain"), crate::tensor::Tensor::ones(1, dim), true)?,
                store.add_bias(format!("{name}.bias"), dim)?,
            )),
            NormKind::L2Norm => None,
        };
        Ok(Norm { kind, affine })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var, TensorError> {
        match self.kind {
            NormKind::L2Norm => g.l2_normalize_rows(x),
            NormKind::LayerNorm => {
                let y = g.layer_norm_rows(x)?;
                let (gain, bias) = self.affine.expect("layer norm has affine params");
                let gain = g.param(gain);
                let bias = g.param(bias);
                let y = g.mul(y, gain)?;
                g.add(y, bias)
            }
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.affine.map(|(a, b)| vec![a, b]).unwrap_or_default()
    }
}
