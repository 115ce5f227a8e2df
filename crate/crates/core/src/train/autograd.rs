//! Reverse-mode differentiation over a recorded op list.
//!
//! Model graphs are written once against [`Exec`]. [`Eager`] evaluates them
//! directly and lets intermediates drop as soon as they go out of scope;
//! [`Tape`] records every op so [`Tape::backward`] can replay it in reverse.
//! Nodes are appended in evaluation order, which is already a topological
//! order, so the backward sweep is a single reverse scan.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::models::lstm::{lstm_backward, lstm_forward};
use crate::ops::{
    activate, activate_backward, conv1d_backward, conv1d_with, embedding_backward,
    embedding_lookup, linear, matmul_backward, pool_time, pool_time_backward, sum_rows,
    ActivationKind, ConvSpec, Padding, PoolKind,
};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{dropout_mask, elementwise, matmul, ElementwiseOp, Tensor};
use crate::train::loss::cross_entropy;

#[derive(Clone, Debug)]
pub enum Op {
    Matmul,
    Add,
    Mul,
    Scale(f64),
    Transpose,
    Reshape(Vec<usize>),
    /// Inputs: x, filters, optional bias.
    Conv { spec: ConvSpec },
    Activate(ActivationKind),
    Pool(PoolKind),
    /// Input: table.
    Embedding { ids: Vec<usize> },
    /// Inputs: x, w, optional bias.
    Linear,
    PadTime { left: usize, right: usize },
    /// Concatenation along axis 0 of inputs sharing trailing dims.
    ConcatRows,
    /// Rank-1 `[c]` inputs become the columns of a `[c, n]` map.
    StackColumns,
    /// Inputs: x, w_ih, w_hh, bias.
    Lstm { reverse: bool },
    /// Mean negative log-likelihood of `[n, C]` logits; output `[1]`.
    CrossEntropy { targets: Vec<usize> },
    Sum,
}

fn expect_inputs(op: &Op, inputs: &[&Tensor], n: std::ops::RangeInclusive<usize>) -> Result<()> {
    if !n.contains(&inputs.len()) {
        return Err(Error::Internal(format!(
            "{op:?} got {} inputs",
            inputs.len()
        )));
    }
    Ok(())
}

impl Op {
    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        match self {
            Op::Matmul => {
                expect_inputs(self, inputs, 2..=2)?;
                matmul(inputs[0], inputs[1])
            }
            Op::Add | Op::Mul => {
                expect_inputs(self, inputs, 2..=2)?;
                let kind = if matches!(self, Op::Add) {
                    ElementwiseOp::Add
                } else {
                    ElementwiseOp::Mul
                };
                elementwise(inputs[0], inputs[1], kind)
            }
            Op::Scale(s) => Ok(inputs[0].scale(*s)),
            Op::Transpose => inputs[0].transpose(),
            Op::Reshape(shape) => inputs[0].reshape(shape),
            Op::Conv { spec } => {
                expect_inputs(self, inputs, 2..=3)?;
                conv1d_with(inputs[0], inputs[1], inputs.get(2).copied(), spec)
            }
            Op::Activate(kind) => activate(inputs[0], *kind),
            Op::Pool(kind) => pool_time(inputs[0], *kind),
            Op::Embedding { ids } => embedding_lookup(inputs[0], ids),
            Op::Linear => {
                expect_inputs(self, inputs, 2..=3)?;
                linear(inputs[0], inputs[1], inputs.get(2).copied())
            }
            Op::PadTime { left, right } => {
                let (c, t) = inputs[0].dims2()?;
                let tp = t + left + right;
                let mut out = vec![0.0; c * tp];
                for i in 0..c {
                    out[i * tp + left..i * tp + left + t].copy_from_slice(inputs[0].row(i));
                }
                Ok(Tensor::from_parts(vec![c, tp], out))
            }
            Op::ConcatRows => {
                let first = inputs
                    .first()
                    .ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
                let tail = &first.shape()[1..];
                let mut rows = 0;
                let mut data = Vec::new();
                for x in inputs {
                    if &x.shape()[1..] != tail {
                        return Err(Error::Dimension(format!(
                            "concat: {:?} does not match trailing dims {tail:?}",
                            x.shape()
                        )));
                    }
                    rows += x.shape()[0];
                    data.extend_from_slice(x.data());
                }
                let mut shape = vec![rows];
                shape.extend_from_slice(tail);
                Ok(Tensor::from_parts(shape, data))
            }
            Op::StackColumns => {
                let n = inputs.len();
                let c = inputs
                    .first()
                    .ok_or_else(|| Error::Dimension("stack of nothing".into()))?
                    .numel();
                let mut out = vec![0.0; c * n];
                for (j, x) in inputs.iter().enumerate() {
                    if x.shape() != [c] {
                        return Err(Error::Dimension(format!(
                            "stack_columns: {:?} vs [{c}]",
                            x.shape()
                        )));
                    }
                    for (i, &v) in x.data().iter().enumerate() {
                        out[i * n + j] = v;
                    }
                }
                Ok(Tensor::from_parts(vec![c, n], out))
            }
            Op::Lstm { reverse } => {
                expect_inputs(self, inputs, 4..=4)?;
                lstm_forward(inputs[0], inputs[1], inputs[2], inputs[3], *reverse)
            }
            Op::CrossEntropy { targets } => {
                let (loss, _) = cross_entropy(inputs[0], targets)?;
                Ok(Tensor::scalar(loss))
            }
            Op::Sum => Ok(Tensor::scalar(inputs[0].sum())),
        }
    }

    /// One gradient per input, given the output gradient.
    pub fn backward(&self, inputs: &[&Tensor], grad: &Tensor) -> Result<Vec<Tensor>> {
        Ok(match self {
            Op::Matmul => {
                let (da, db) = matmul_backward(inputs[0], inputs[1], grad)?;
                vec![da, db]
            }
            Op::Add => vec![grad.clone(), grad.clone()],
            Op::Mul => vec![
                elementwise(grad, inputs[1], ElementwiseOp::Mul)?,
                elementwise(grad, inputs[0], ElementwiseOp::Mul)?,
            ],
            Op::Scale(s) => vec![grad.scale(*s)],
            Op::Transpose => vec![grad.transpose()?],
            Op::Reshape(_) => vec![grad.reshape(inputs[0].shape())?],
            Op::Conv { spec } => {
                let (dx, dw, db) = conv1d_backward(inputs[0], inputs[1], spec, grad)?;
                let mut out = vec![dx, dw];
                if inputs.len() == 3 {
                    out.push(db);
                }
                out
            }
            Op::Activate(kind) => vec![activate_backward(inputs[0], *kind, grad)?],
            Op::Pool(kind) => vec![pool_time_backward(inputs[0], *kind, grad)?],
            Op::Embedding { ids } => vec![embedding_backward(inputs[0].shape(), ids, grad)?],
            Op::Linear => {
                let (dx, dw) = matmul_backward(inputs[0], inputs[1], grad)?;
                let mut out = vec![dx, dw];
                if inputs.len() == 3 {
                    out.push(sum_rows(grad)?);
                }
                out
            }
            Op::PadTime { left, .. } => {
                let (c, t) = inputs[0].dims2()?;
                let tp = grad.shape()[1];
                let mut dx = Vec::with_capacity(c * t);
                for i in 0..c {
                    dx.extend_from_slice(&grad.data()[i * tp + left..i * tp + left + t]);
                }
                vec![Tensor::from_parts(vec![c, t], dx)]
            }
            Op::ConcatRows => {
                let mut offset = 0;
                inputs
                    .iter()
                    .map(|x| {
                        let n = x.numel();
                        let part = grad.data()[offset..offset + n].to_vec();
                        offset += n;
                        Tensor::from_parts(x.shape().to_vec(), part)
                    })
                    .collect()
            }
            Op::StackColumns => {
                let n = inputs.len();
                let c = inputs[0].numel();
                (0..n)
                    .map(|j| {
                        let col = (0..c).map(|i| grad.data()[i * n + j]).collect();
                        Tensor::from_parts(vec![c], col)
                    })
                    .collect()
            }
            Op::Lstm { reverse } => {
                let (dx, dwi, dwh, db) =
                    lstm_backward(inputs[0], inputs[1], inputs[2], inputs[3], *reverse, grad)?;
                vec![dx, dwi, dwh, db]
            }
            Op::CrossEntropy { targets } => {
                let (_, g) = cross_entropy(inputs[0], targets)?;
                vec![g.scale(grad.data()[0])]
            }
            Op::Sum => vec![Tensor::full(inputs[0].shape(), grad.data()[0])],
        })
    }
}

/// An evaluator for model graphs.
pub trait Exec {
    type Value: Clone;

    fn param(&mut self, id: ParamId) -> Self::Value;
    fn constant(&mut self, t: Tensor) -> Self::Value;
    fn apply(&mut self, op: Op, inputs: &[&Self::Value]) -> Result<Self::Value>;
    fn tensor<'v>(&'v self, v: &'v Self::Value) -> &'v Tensor;
    /// `Some` only in training mode; dropout is the identity otherwise.
    fn dropout_rng(&mut self) -> Option<&mut Rng>;

    fn training(&mut self) -> bool {
        self.dropout_rng().is_some()
    }

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Matmul, &[a, b])
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Add, &[a, b])
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Mul, &[a, b])
    }

    fn scale(&mut self, a: &Self::Value, s: f64) -> Result<Self::Value> {
        self.apply(Op::Scale(s), &[a])
    }

    fn transpose(&mut self, a: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Transpose, &[a])
    }

    fn reshape(&mut self, a: &Self::Value, shape: &[usize]) -> Result<Self::Value> {
        self.apply(Op::Reshape(shape.to_vec()), &[a])
    }

    fn conv(
        &mut self,
        x: &Self::Value,
        filters: &Self::Value,
        bias: Option<&Self::Value>,
        spec: ConvSpec,
    ) -> Result<Self::Value> {
        match bias {
            Some(b) => self.apply(Op::Conv { spec }, &[x, filters, b]),
            None => self.apply(Op::Conv { spec }, &[x, filters]),
        }
    }

    fn depthwise(&mut self, x: &Self::Value, kernels: &Self::Value, padding: Padding) -> Result<Self::Value> {
        let (c, _) = self.tensor(x).dims2()?;
        let (kc, k) = self.tensor(kernels).dims2()?;
        if kc != c {
            return Err(Error::Dimension(format!(
                "depthwise kernels have {kc} rows for {c} channels"
            )));
        }
        let spec = ConvSpec::depthwise(c, k, padding)?;
        self.conv(x, kernels, None, spec)
    }

    fn pointwise(&mut self, x: &Self::Value, w: &Self::Value, bias: Option<&Self::Value>) -> Result<Self::Value> {
        let (c, _) = self.tensor(x).dims2()?;
        let (out, wc) = self.tensor(w).dims2()?;
        if wc != c {
            return Err(Error::Dimension(format!(
                "pointwise weight expects {wc} channels, input has {c}"
            )));
        }
        let spec = ConvSpec::pointwise(c, out)?;
        self.conv(x, w, bias, spec)
    }

    fn activate(&mut self, x: &Self::Value, kind: ActivationKind) -> Result<Self::Value> {
        self.apply(Op::Activate(kind), &[x])
    }

    fn pool(&mut self, x: &Self::Value, kind: PoolKind) -> Result<Self::Value> {
        self.apply(Op::Pool(kind), &[x])
    }

    fn embedding(&mut self, table: &Self::Value, ids: &[usize]) -> Result<Self::Value> {
        self.apply(Op::Embedding { ids: ids.to_vec() }, &[table])
    }

    fn linear(&mut self, x: &Self::Value, w: &Self::Value, bias: Option<&Self::Value>) -> Result<Self::Value> {
        match bias {
            Some(b) => self.apply(Op::Linear, &[x, w, b]),
            None => self.apply(Op::Linear, &[x, w]),
        }
    }

    fn pad_time(&mut self, x: &Self::Value, left: usize, right: usize) -> Result<Self::Value> {
        self.apply(Op::PadTime { left, right }, &[x])
    }

    fn concat_rows(&mut self, xs: &[&Self::Value]) -> Result<Self::Value> {
        self.apply(Op::ConcatRows, xs)
    }

    fn stack_columns(&mut self, xs: &[&Self::Value]) -> Result<Self::Value> {
        self.apply(Op::StackColumns, xs)
    }

    fn lstm(
        &mut self,
        x: &Self::Value,
        w_ih: &Self::Value,
        w_hh: &Self::Value,
        bias: &Self::Value,
        reverse: bool,
    ) -> Result<Self::Value> {
        self.apply(Op::Lstm { reverse }, &[x, w_ih, w_hh, bias])
    }

    fn cross_entropy(&mut self, logits: &Self::Value, targets: &[usize]) -> Result<Self::Value> {
        self.apply(
            Op::CrossEntropy {
                targets: targets.to_vec(),
            },
            &[logits],
        )
    }

    fn sum(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Sum, &[x])
    }

    /// Inverted dropout with a fresh mask in training mode.
    fn dropout(&mut self, x: &Self::Value, p: f64) -> Result<Self::Value> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x.clone());
        }
        let shape = self.tensor(x).shape().to_vec();
        let Some(rng) = self.dropout_rng() else {
            return Ok(x.clone());
        };
        let mask = dropout_mask(&shape, p, rng, true)?;
        let m = self.constant(mask);
        self.mul(x, &m)
    }
}

/// Direct evaluation; nothing is retained beyond the values the caller holds.
pub struct Eager<'a> {
    store: &'a ParamStore,
    rng: Option<&'a mut Rng>,
}

impl<'a> Eager<'a> {
    pub fn new(store: &'a ParamStore) -> Eager<'a> {
        Eager { store, rng: None }
    }

    pub fn training(store: &'a ParamStore, rng: &'a mut Rng) -> Eager<'a> {
        Eager {
            store,
            rng: Some(rng),
        }
    }
}

impl Exec for Eager<'_> {
    type Value = Arc<Tensor>;

    fn param(&mut self, id: ParamId) -> Arc<Tensor> {
        self.store.shared(id)
    }

    fn constant(&mut self, t: Tensor) -> Arc<Tensor> {
        Arc::new(t)
    }

    fn apply(&mut self, op: Op, inputs: &[&Arc<Tensor>]) -> Result<Arc<Tensor>> {
        let refs: Vec<&Tensor> = inputs.iter().map(|v| &***v).collect();
        op.forward(&refs).map(Arc::new)
    }

    fn tensor<'v>(&'v self, v: &'v Arc<Tensor>) -> &'v Tensor {
        v
    }

    fn dropout_rng(&mut self) -> Option<&mut Rng> {
        self.rng.as_deref_mut()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

struct Node {
    value: Arc<Tensor>,
    op: Option<Op>,
    inputs: Vec<usize>,
    requires_grad: bool,
}

/// Recording evaluator. Parameters become shared leaves (one node per
/// parameter no matter how often it is used, so tied weights accumulate).
pub struct Tape<'a> {
    store: &'a ParamStore,
    rng: Option<&'a mut Rng>,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, usize>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Tape<'a> {
        Tape {
            store,
            rng: None,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn training(store: &'a ParamStore, rng: &'a mut Rng) -> Tape<'a> {
        Tape {
            rng: Some(rng),
            ..Tape::new(store)
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Internal(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.nodes[loss.0].value.shape()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = &node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &*self.nodes[i].value).collect();
            let in_grads = op.backward(&inputs, &g)?;
            if in_grads.len() != node.inputs.len() {
                return Err(Error::Internal(format!("{op:?} returned {} grads", in_grads.len())));
            }
            for (&i, gi) in node.inputs.iter().zip(in_grads) {
                if !self.nodes[i].requires_grad {
                    continue;
                }
                match &mut grads[i] {
                    Some(acc) => acc.add_assign(&gi)?,
                    slot => *slot = Some(gi),
                }
            }
            grads[idx] = Some(g);
        }
        let mut by_param = HashMap::new();
        for (&pid, &node) in &self.param_nodes {
            let g = grads[node]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.nodes[node].value.shape()));
            by_param.insert(pid, g);
        }
        Ok(Gradients { by_param })
    }
}

impl Exec for Tape<'_> {
    type Value = Var;

    fn param(&mut self, id: ParamId) -> Var {
        if let Some(&n) = self.param_nodes.get(&id) {
            return Var(n);
        }
        self.nodes.push(Node {
            value: self.store.shared(id),
            op: None,
            inputs: Vec::new(),
            requires_grad: true,
        });
        let n = self.nodes.len() - 1;
        self.param_nodes.insert(id, n);
        Var(n)
    }

    fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Arc::new(t),
            op: None,
            inputs: Vec::new(),
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn apply(&mut self, op: Op, inputs: &[&Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = inputs.iter().map(|v| &*self.nodes[v.0].value).collect();
        let value = op.forward(&refs)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op: Some(op),
            inputs: inputs.iter().map(|v| v.0).collect(),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn tensor<'v>(&'v self, v: &'v Var) -> &'v Tensor {
        &self.nodes[v.0].value
    }

    fn dropout_rng(&mut self) -> Option<&mut Rng> {
        self.rng.as_deref_mut()
    }
}

/// Gradients keyed by parameter. Every parameter read during the forward pass
/// has an entry, zero when the loss does not depend on it.
#[derive(Debug, Default)]
pub struct Gradients {
    by_param: HashMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    pub fn into_map(self) -> HashMap<ParamId, Tensor> {
        self.by_param
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn accumulate(&mut self, other: Gradients) -> Result<()> {
        for (id, g) in other.by_param {
            match self.by_param.get_mut(&id) {
                Some(acc) => acc.add_assign(&g)?,
                None => {
                    self.by_param.insert(id, g);
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.by_param.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_all_ones() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::full(&[2, 3], 0.5)).unwrap();
        let mut tape = Tape::new(&store);
        let xv = tape.param(x);
        let s = tape.sum(&xv).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn max_pool_gradient_routes_to_max() {
        let mut store = ParamStore::new();
        let x = store
            .add("x", Tensor::from_rows(&[vec![0.1, 0.9, 0.3]]).unwrap())
            .unwrap();
        let mut tape = Tape::new(&store);
        let xv = tape.param(x);
        let p = tape.pool(&xv, PoolKind::Max).unwrap();
        let s = tape.sum(&p).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn reused_parameter_accumulates() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::full(&[1, 1], 3.0)).unwrap();
        let mut tape = Tape::new(&store);
        let a1 = tape.param(a);
        let a2 = tape.param(a);
        assert_eq!(a1, a2);
        let sq = tape.mul(&a1, &a2).unwrap();
        let s = tape.sum(&sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[6.0]);
    }

    #[test]
    fn untouched_path_yields_zero_entry() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::ones(&[2])).unwrap();
        let b = store.add("b", Tensor::ones(&[2])).unwrap();
        let mut tape = Tape::new(&store);
        let av = tape.param(a);
        let _bv = tape.param(b);
        let s = tape.sum(&av).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap(), &Tensor::zeros(&[2]));
    }

    #[test]
    fn eager_and_tape_agree() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(1);
        let w = store.add("w", Tensor::randn(&[3, 2], 1.0, &mut rng)).unwrap();
        let x = Tensor::randn(&[2, 4], 1.0, &mut rng);
        fn run<E: Exec>(e: &mut E, w: ParamId, x: &Tensor) -> Result<Tensor> {
            let wv = e.param(w);
            let xv = e.constant(x.clone());
            let y = e.pointwise(&xv, &wv, None)?;
            let y = e.activate(&y, ActivationKind::Gelu)?;
            Ok(e.tensor(&y).clone())
        }
        let a = run(&mut Eager::new(&store), w, &x).unwrap();
        let b = run(&mut Tape::new(&store), w, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::ones(&[2])).unwrap();
        let mut tape = Tape::new(&store);
        let av = tape.param(a);
        assert!(tape.backward(av).is_err());
    }
}
