//! Reverse-mode differentiation over a tape of 2-D ops.
//!
//! A [`Graph`] records every op in creation order, so a reverse sweep over
//! the node list is a valid topological order for backward. Parameters are
//! read straight from a borrowed [`ParamStore`]; their gradients are
//! collected in [`ParamGrads`] and merged into the store by the caller, which
//! lets independent graphs run on separate threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::{dot, matmul_into};
use super::param::{ParamGrads, ParamId, ParamStore};
use super::{Tensor, TensorError};
use crate::rng::mix_seed;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const NORM_EPS: f64 = 1e-12;
const LAYER_NORM_EPS: f64 = 1e-9;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add { a: Var, b: Var, broadcast: bool },
    Mul { a: Var, b: Var, broadcast: bool },
    Scale(Var, f64),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    GatherRows { x: Var, idx: Vec<Option<usize>> },
    Softmax(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    L2Normalize { x: Var, norms: Vec<f64> },
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    Sum(Var),
    Mean(Var),
    SoftmaxXent { x: Var, targets: Vec<usize>, probs: Tensor },
    BceLogits { x: Var, labels: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` only for parameter nodes, whose value lives in the store.
    value: Option<Tensor>,
    requires_grad: bool,
    /// Persistent gradient of differentiable leaves.
    grad: Option<Tensor>,
}

#[derive(Clone, Copy, Debug)]
struct DropoutState {
    seed: u64,
    counter: u64,
}

/// A single computation graph. Not `Sync`-shared: one graph per thread.
pub struct Graph<'s> {
    store: Option<&'s ParamStore>,
    nodes: Vec<Node>,
    param_grads: ParamGrads,
    dropout: Option<DropoutState>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s> Graph<'s> {
    pub fn new() -> Self {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_grads: ParamGrads::default(),
            dropout: None,
        }
    }

    pub fn with_params(store: &'s ParamStore) -> Self {
        Graph {
            store: Some(store),
            ..Self::new()
        }
    }

    /// Enables dropout. Masks derive from `seed` and a per-call counter.
    pub fn train_mode(mut self, seed: u64) -> Self {
        self.dropout = Some(DropoutState { seed, counter: 0 });
        self
    }

    pub fn is_training(&self) -> bool {
        self.dropout.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.expect("param node without store").value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Gradient accumulated on a differentiable leaf created by [`Graph::input`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn param_grads(&self) -> &ParamGrads {
        &self.param_grads
    }

    pub fn take_param_grads(&mut self) -> ParamGrads {
        std::mem::take(&mut self.param_grads)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool, name: &'static str) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Result<Var, TensorError> {
        self.push(Op::Leaf, t, false, "constant")
    }

    /// Differentiable leaf whose gradient is kept on the node.
    pub fn input(&mut self, t: Tensor) -> Result<Var, TensorError> {
        self.push(Op::Leaf, t, true, "input")
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let store = self.store.expect("graph has no parameter store");
        assert!(id.0 < store.len(), "parameter id out of range");
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: true,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(TensorError::Dimension {
                op: "matmul",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let mut out = Tensor::zeros(av.rows(), bv.cols());
        matmul_into(av, bv, &mut out);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), out, rg, "matmul")
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<bool, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(false)
        } else if sb.0 == 1 && sb.1 == sa.1 {
            Ok(true)
        } else {
            Err(TensorError::Dimension { op, lhs: sa, rhs: sb })
        }
    }

    /// Elementwise sum; `b` may be a `1 x n` row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let broadcast = self.broadcast_check("add", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = av.clone();
        let n = av.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += if broadcast { bv.data()[i % n] } else { bv.data()[i] };
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add { a, b, broadcast }, out, rg, "add")
    }

    /// Elementwise product; `b` may be a `1 x n` row broadcast over `a`'s rows.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let broadcast = self.broadcast_check("mul", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = av.clone();
        let n = av.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o *= if broadcast { bv.data()[i % n] } else { bv.data()[i] };
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Mul { a, b, broadcast }, out, rg, "mul")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, TensorError> {
        let out = self.value(x).scale(s);
        let rg = self.rg(x);
        self.push(Op::Scale(x, s), out, rg, "scale")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).transpose();
        let rg = self.rg(x);
        self.push(Op::Transpose(x), out, rg, "transpose")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = parts.first().map(|&p| self.shape(p).0).ok_or_else(|| {
            TensorError::Contract("concat_cols of zero tensors".into())
        })?;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(TensorError::Dimension {
                    op: "concat_cols",
                    lhs: (rows, cols),
                    rhs: s,
                });
            }
            cols += s.1;
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::ConcatCols(parts.to_vec()), out, rg, "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = parts.first().map(|&p| self.shape(p).1).ok_or_else(|| {
            TensorError::Contract("concat_rows of zero tensors".into())
        })?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(TensorError::Dimension {
                    op: "concat_rows",
                    lhs: (rows, cols),
                    rhs: t.shape(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::ConcatRows(parts.to_vec()), out, rg, "concat_rows")
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        if start + len > t.rows() || len == 0 {
            return Err(TensorError::Index {
                index: start + len,
                len: t.rows(),
            });
        }
        let c = t.cols();
        let out = Tensor::from_vec(len, c, t.data()[start * c..(start + len) * c].to_vec())?;
        let rg = self.rg(x);
        self.push(Op::SliceRows { x, start }, out, rg, "slice_rows")
    }

    /// Row lookup; `None` yields a zero row.
    pub fn gather_rows(&mut self, x: Var, idx: &[Option<usize>]) -> Result<Var, TensorError> {
        let t = self.value(x);
        let c = t.cols();
        let mut out = Tensor::zeros(idx.len(), c);
        for (r, i) in idx.iter().enumerate() {
            if let Some(i) = *i {
                if i >= t.rows() {
                    return Err(TensorError::Index { index: i, len: t.rows() });
                }
                out.row_mut(r).copy_from_slice(t.row(i));
            }
        }
        let rg = self.rg(x);
        self.push(
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            out,
            rg,
            "gather_rows",
        )
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        self.masked_softmax_rows(x, None)
    }

    /// Row softmax with max subtraction. Entries where `keep` is false get a
    /// logit of minus infinity; a fully masked row yields zeros.
    pub fn masked_softmax_rows(&mut self, x: Var, keep: Option<&[bool]>) -> Result<Var, TensorError> {
        let t = self.value(x);
        if let Some(k) = keep {
            if k.len() != t.len() {
                return Err(TensorError::Dimension {
                    op: "masked_softmax_rows",
                    lhs: t.shape(),
                    rhs: (1, k.len()),
                });
            }
        }
        let mut out = t.clone();
        let c = t.cols();
        for r in 0..t.rows() {
            let keep_row = keep.map(|k| &k[r * c..(r + 1) * c]);
            softmax_in_place(out.row_mut(r), keep_row);
        }
        let rg = self.rg(x);
        self.push(Op::Softmax(x), out, rg, "softmax_rows")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, TensorError> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        self.push(Op::LeakyRelu(x, slope), out, rg, "leaky_relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(Op::Sigmoid(x), out, rg, "sigmoid")
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let mut out = self.value(x).clone();
        let mut norms = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = dot(row, row).sqrt().max(NORM_EPS);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let rg = self.rg(x);
        self.push(Op::L2Normalize { x, norms }, out, rg, "l2_normalize_rows")
    }

    /// `(x - mean) / std` per row, population variance, no affine part.
    pub fn layer_norm_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let mut out = self.value(x).clone();
        let mut inv_std = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * s);
            inv_std.push(s);
        }
        let rg = self.rg(x);
        self.push(Op::LayerNorm { x, inv_std }, out, rg, "layer_norm_rows")
    }

    /// Inverted dropout. Identity outside training mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        let Some(state) = self.dropout.as_mut() else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(state.seed, &[state.counter]));
        state.counter += 1;
        let t = self.value(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut out = t.clone();
        out.data_mut().iter_mut().zip(&mask).for_each(|(o, m)| *o *= m);
        let rg = self.rg(x);
        self.push(Op::Dropout { x, mask }, out, rg, "dropout")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Op::Sum(x), Tensor::scalar(s), rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let s = t.sum() / t.len() as f64;
        let rg = self.rg(x);
        self.push(Op::Mean(x), Tensor::scalar(s), rg, "mean")
    }

    /// Mean over rows of `-log softmax(x_r)[targets_r]`.
    pub fn softmax_cross_entropy(&mut self, x: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x);
        if targets.len() != t.rows() {
            return Err(TensorError::Dimension {
                op: "softmax_cross_entropy",
                lhs: t.shape(),
                rhs: (targets.len(), 1),
            });
        }
        let mut probs = t.clone();
        let mut loss = 0.0;
        for (r, &target) in targets.iter().enumerate() {
            if target >= t.cols() {
                return Err(TensorError::Index { index: target, len: t.cols() });
            }
            let row = t.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[target];
            softmax_in_place(probs.row_mut(r), None);
        }
        loss /= t.rows() as f64;
        let rg = self.rg(x);
        self.push(
            Op::SoftmaxXent {
                x,
                targets: targets.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            rg,
            "softmax_cross_entropy",
        )
    }

    /// Mean binary cross-entropy on logits, computed in logit space.
    pub fn bce_with_logits(&mut self, x: Var, labels: &[f64]) -> Result<Var, TensorError> {
        let t = self.value(x);
        if labels.len() != t.len() {
            return Err(TensorError::Dimension {
                op: "bce_with_logits",
                lhs: t.shape(),
                rhs: (1, labels.len()),
            });
        }
        let loss = t
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / t.len() as f64;
        let rg = self.rg(x);
        self.push(
            Op::BceLogits {
                x,
                labels: labels.to_vec(),
            },
            Tensor::scalar(loss),
            rg,
            "bce_with_logits",
        )
    }

    /// Reverse sweep from a scalar. Leaf and parameter gradients accumulate
    /// across calls.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.shape(loss) != (1, 1) {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, g, &mut grads)?;
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: Tensor, grads: &mut [Option<Tensor>]) -> Result<(), TensorError> {
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| match &mut grads[v.0] {
            Some(e) => e.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &self.nodes[i].op {
            Op::Leaf => {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(e) => e.add_assign(&g),
                    None => node.grad = Some(g),
                }
            }
            Op::Param(id) => {
                let id = *id;
                if !g.is_finite() {
                    return Err(TensorError::NonFinite { op: "parameter gradient" });
                }
                match self.param_grads.0.get_mut(&id) {
                    Some(e) => e.add_assign(&g),
                    None => {
                        self.param_grads.0.insert(id, g);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    acc(grads, a, g.matmul_t(self.value(b)));
                }
                if self.rg(b) {
                    acc(grads, b, self.value(a).t_matmul(&g));
                }
            }
            Op::Add { a, b, broadcast } => {
                let (a, b, broadcast) = (*a, *b, *broadcast);
                if self.rg(b) {
                    acc(grads, b, if broadcast { column_sums(&g) } else { g.clone() });
                }
                if self.rg(a) {
                    acc(grads, a, g);
                }
            }
            Op::Mul { a, b, broadcast } => {
                let (a, b, broadcast) = (*a, *b, *broadcast);
                let (av, bv) = (self.value(a), self.value(b));
                let n = av.cols();
                if self.rg(a) {
                    let mut ga = g.clone();
                    for (k, v) in ga.data_mut().iter_mut().enumerate() {
                        *v *= if broadcast { bv.data()[k % n] } else { bv.data()[k] };
                    }
                    acc(grads, a, ga);
                }
                if self.rg(b) {
                    let mut gb = g.clone();
                    gb.data_mut().iter_mut().zip(av.data()).for_each(|(v, x)| *v *= x);
                    acc(grads, b, if broadcast { column_sums(&gb) } else { gb });
                }
            }
            Op::Scale(x, s) => {
                let (x, s) = (*x, *s);
                acc(grads, x, g.scale(s));
            }
            Op::Transpose(x) => {
                let x = *x;
                acc(grads, x, g.transpose());
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.rg(p) {
                        let mut gp = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        acc(grads, p, gp);
                    }
                    off += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.rg(p) {
                        let gp = Tensor::from_vec(rows, cols, g.data()[off * cols..(off + rows) * cols].to_vec())?;
                        acc(grads, p, gp);
                    }
                    off += rows;
                }
            }
            Op::SliceRows { x, start } => {
                let (x, start) = (*x, *start);
                let (rows, cols) = self.shape(x);
                let mut gx = Tensor::zeros(rows, cols);
                gx.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                acc(grads, x, gx);
            }
            Op::GatherRows { x, idx } => {
                let x = *x;
                let (rows, cols) = self.shape(x);
                let mut gx = Tensor::zeros(rows, cols);
                for (r, i) in idx.iter().enumerate() {
                    if let Some(i) = *i {
                        gx.row_mut(i).iter_mut().zip(g.row(r)).for_each(|(a, b)| *a += b);
                    }
                }
                acc(grads, x, gx);
            }
            Op::Softmax(x) => {
                let x = *x;
                let y = self.nodes[i].value.as_ref().expect("softmax value");
                let mut gx = g.clone();
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let s = dot(g.row(r), yr);
                    gx.row_mut(r)
                        .iter_mut()
                        .zip(yr)
                        .for_each(|(gv, &yv)| *gv = yv * (*gv - s));
                }
                acc(grads, x, gx);
            }
            Op::LeakyRelu(x, slope) => {
                let (x, slope) = (*x, *slope);
                let mut gx = g;
                gx.data_mut()
                    .iter_mut()
                    .zip(self.value(x).data())
                    .for_each(|(gv, &xv)| {
                        if xv <= 0.0 {
                            *gv *= slope
                        }
                    });
                acc(grads, x, gx);
            }
            Op::Sigmoid(x) => {
                let x = *x;
                let y = self.nodes[i].value.as_ref().expect("sigmoid value");
                let mut gx = g;
                gx.data_mut()
                    .iter_mut()
                    .zip(y.data())
                    .for_each(|(gv, &yv)| *gv *= yv * (1.0 - yv));
                acc(grads, x, gx);
            }
            Op::L2Normalize { x, norms } => {
                let x = *x;
                let y = self.nodes[i].value.as_ref().expect("l2 value");
                let mut gx = g.clone();
                for (r, &n) in norms.iter().enumerate() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    // Below the clamp the op is a plain scaling by 1/eps.
                    let proj = if n > NORM_EPS { dot(yr, gr) } else { 0.0 };
                    gx.row_mut(r)
                        .iter_mut()
                        .zip(yr.iter().zip(gr))
                        .for_each(|(o, (&yv, &gv))| *o = (gv - yv * proj) / n);
                }
                acc(grads, x, gx);
            }
            Op::LayerNorm { x, inv_std } => {
                let x = *x;
                let y = self.nodes[i].value.as_ref().expect("layer norm value");
                let mut gx = g.clone();
                for (r, &s) in inv_std.iter().enumerate() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let n = gr.len() as f64;
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = dot(gr, yr) / n;
                    gx.row_mut(r)
                        .iter_mut()
                        .zip(yr.iter().zip(gr))
                        .for_each(|(o, (&yv, &gv))| *o = s * (gv - mean_g - yv * mean_gy));
                }
                acc(grads, x, gx);
            }
            Op::Dropout { x, mask } => {
                let x = *x;
                let mut gx = g;
                gx.data_mut().iter_mut().zip(mask).for_each(|(gv, m)| *gv *= m);
                acc(grads, x, gx);
            }
            Op::Sum(x) => {
                let x = *x;
                let (r, c) = self.shape(x);
                acc(grads, x, Tensor::full(r, c, g.item()));
            }
            Op::Mean(x) => {
                let x = *x;
                let (r, c) = self.shape(x);
                acc(grads, x, Tensor::full(r, c, g.item() / (r * c) as f64));
            }
            Op::SoftmaxXent { x, targets, probs } => {
                let x = *x;
                let m = probs.rows() as f64;
                let mut gx = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let v = gx.get(r, t);
                    gx.set(r, t, v - 1.0);
                }
                acc(grads, x, gx.scale(g.item() / m));
            }
            Op::BceLogits { x, labels } => {
                let x = *x;
                let t = self.value(x);
                let n = t.len() as f64;
                let data = t
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&z, &y)| (sigmoid(z) - y) * g.item() / n)
                    .collect();
                let gx = Tensor::from_vec(t.rows(), t.cols(), data)?;
                acc(grads, x, gx);
            }
        }
        Ok(())
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        out.data_mut().iter_mut().zip(g.row(r)).for_each(|(o, v)| *o += v);
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Stable softmax of one row; masked entries become zero.
pub fn softmax_in_place(row: &mut [f64], keep: Option<&[bool]>) {
    let kept = |j: usize| keep.is_none_or(|k| k[j]);
    let m = row
        .iter()
        .enumerate()
        .filter(|(j, _)| kept(*j))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut total = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        *v = if kept(j) { (*v - m).exp() } else { 0.0 };
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
