use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor, TensorError};

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    /// Per-row step counts for row-sparse parameters (empty for dense ones).
    pub row_steps: Vec<Vec<u64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, learning_rate: f64, weight_decay: f64) -> Result<Self, TensorError> {
        Self::with_betas(store, learning_rate, 0.9, 0.999, 1e-8, weight_decay)
    }

    pub fn with_betas(
        store: &ParamStore,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        weight_decay: f64,
    ) -> Result<Self, TensorError> {
        if weight_decay < 0.0 || !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(TensorError::Config(format!(
                "invalid optimizer settings: beta1={beta1}, beta2={beta2}, weight_decay={weight_decay}"
            )));
        }
        let first_moment = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect::<Vec<_>>();
        let row_steps = store
            .iter()
            .map(|(_, p)| if p.row_sparse { vec![0; p.value.rows()] } else { Vec::new() })
            .collect();
        Ok(AdamW {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            weight_decay,
            step: 0,
            second_moment: first_moment.clone(),
            first_moment,
            row_steps,
        })
    }

    /// One update from the stored grads, which are cleared afterwards.
    ///
    /// Row-sparse parameters use lazy updates: a row whose gradient is
    /// exactly zero keeps its value and moments, and its bias correction
    /// counts only the steps in which it was touched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), TensorError> {
        if self.first_moment.len() != store.len() {
            return Err(TensorError::Contract("optimizer state does not match parameter set".into()));
        }
        if let Some((_, p)) = store.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(TensorError::Contract(format!("parameter `{}` has no gradient", p.name)));
        }
        self.step += 1;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (k, p) in store.params_mut().iter_mut().enumerate() {
            let grad = p.grad.take().expect("checked above");
            let decay = if p.decay_exempt { 0.0 } else { self.weight_decay };
            let m = &mut self.first_moment[k];
            let v = &mut self.second_moment[k];
            let cols = p.value.cols();
            if p.row_sparse {
                for r in 0..p.value.rows() {
                    let g = grad.row(r);
                    if g.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    self.row_steps[k][r] += 1;
                    let t = self.row_steps[k][r] as i32;
                    let range = r * cols..(r + 1) * cols;
                    adam_update(
                        &mut p.value.data_mut()[range.clone()],
                        g,
                        &mut m.data_mut()[range.clone()],
                        &mut v.data_mut()[range],
                        Hyper { b1, b2, lr, eps, decay, t },
                    );
                }
            } else {
                adam_update(
                    p.value.data_mut(),
                    grad.data(),
                    m.data_mut(),
                    v.data_mut(),
                    Hyper {
                        b1,
                        b2,
                        lr,
                        eps,
                        decay,
                        t: self.step as i32,
                    },
                );
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Hyper {
    b1: f64,
    b2: f64,
    lr: f64,
    eps: f64,
    decay: f64,
    t: i32,
}

fn adam_update(theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], h: Hyper) {
    let c1 = 1.0 - h.b1.powi(h.t);
    let c2 = 1.0 - h.b2.powi(h.t);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = h.b1 * m[i] + (1.0 - h.b1) * g;
        v[i] = h.b2 * v[i] + (1.0 - h.b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] *= 1.0 - h.lr * h.decay;
        theta[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
}
