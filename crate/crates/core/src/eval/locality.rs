use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, Tensor};

use super::pca::power_iteration;

/// Largest singular value.
pub fn spectral_norm(p: &Tensor) -> f64 {
    power_iteration(&p.t_matmul(p), 0x5EC7, &[]).0.sqrt()
}

/// Two content logit vectors that differ only in their first two entries,
/// share the partition sum `Z`, and the distance between their proxy
/// representations next to its upper bound.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalityTrial {
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub delta: f64,
    pub z: f64,
    pub gap: f64,
    pub bound: f64,
    pub spectral_norm: f64,
}

/// `f1 = [g, g, rest..]`, `f2 = [g + eps, g - delta, rest..]` with
/// `delta = -ln(2 - e^eps)`. `p` has one proxy per logit.
pub fn content_locality_trial(p: &Tensor, g: f64, eps: f64, rest: &[f64]) -> Result<LocalityTrial> {
    if !(g > 0.0) || !(eps > 0.0) || eps >= (2.0 - (-g).exp()).ln() {
        return Err(Error::Config(format!("need g > 0 and 0 < eps < ln(2 - e^-g); got g={g}, eps={eps}")));
    }
    if p.rows() != rest.len() + 2 {
        return Err(Error::Config(format!("{} proxies for {} logits", p.rows(), rest.len() + 2)));
    }
    let delta = -(2.0 - eps.exp()).ln();
    let mut f1 = vec![g, g];
    f1.extend_from_slice(rest);
    let mut f2 = f1.clone();
    f2[0] += eps;
    f2[1] -= delta;
    let z: f64 = f1.iter().map(|x| x.exp()).sum();
    let represent = |f: &[f64]| -> Result<Vec<f64>> {
        let mut w = f.to_vec();
        softmax_in_place(&mut w, None);
        Ok(Tensor::row_vector(w).matmul(p)?.into_data())
    };
    let (v1, v2) = (represent(&f1)?, represent(&f2)?);
    let gap = v1.iter().zip(&v2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = spectral_norm(p);
    let bound = 2f64.sqrt() * norm * g.exp() / z * ((2.0 * eps).exp() - 2.0 * eps.exp() + 1.0).sqrt();
    Ok(LocalityTrial {
        f1,
        f2,
        delta,
        z,
        gap,
        bound,
        spectral_norm: norm,
    })
}
