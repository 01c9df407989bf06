use crate::error::{Error, Result};
use crate::nn::{Linear, LEAKY_SLOPE};
use crate::rng::stream;
use crate::tensor::{AdamW, Graph, ParamStore, Tensor};

const PROBE_LR: f64 = 1e-2;

/// Trains `attributes -> item id` (one row per item) with a two-layer
/// classifier and returns top-1 training accuracy. Ties count as misses
/// unless the true class is the first maximum.
pub fn memorization_probe(attributes: &Tensor, hidden_dim: usize, epochs: usize, seed: u64) -> Result<f64> {
    let n = attributes.rows();
    if n < 2 || hidden_dim == 0 {
        return Err(Error::Config("probe needs at least 2 items and a positive hidden width".into()));
    }
    let mut rng = stream(seed, &[0x9B0E]);
    let mut store = ParamStore::new();
    let l1 = Linear::new(&mut store, "probe.hidden", attributes.cols(), hidden_dim, &mut rng)?;
    let l2 = Linear::new(&mut store, "probe.out", hidden_dim, n, &mut rng)?;
    let mut opt = AdamW::new(&store, PROBE_LR, 0.0)?;
    let targets: Vec<usize> = (0..n).collect();
    let forward = |g: &mut Graph<'_>| -> Result<_> {
        let x = g.constant(attributes.clone())?;
        let h = l1.forward(g, x)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE)?;
        Ok(l2.forward(g, h)?)
    };
    for _ in 0..epochs {
        let grads = {
            let mut g = Graph::with_params(&store);
            let logits = forward(&mut g)?;
            let loss = g.softmax_cross_entropy(logits, &targets)?;
            g.backward(loss)?;
            g.take_param_grads()
        };
        store.zero_grads();
        store.accumulate_grads(&grads);
        store.fill_missing_grads();
        opt.step(&mut store)?;
    }
    let mut g = Graph::with_params(&store);
    let logits = forward(&mut g)?;
    let out = g.value(logits);
    let correct = (0..n)
        .filter(|&i| {
            let row = out.row(i);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
            best == i
        })
        .count();
    Ok(correct as f64 / n as f64)
}
