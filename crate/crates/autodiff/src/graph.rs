use std::sync::Arc;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::ops::{self, Activation, Ctx, CustomOp, KeyMask, OpKind, Saved};
use crate::real::Real;
use crate::store::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
enum Source<T: Real> {
    Input {
        name: String,
        bound: Option<Vec<T>>,
        grad: bool,
    },
    Param {
        name: String,
    },
    Const(Vec<T>),
    Op(OpKind<T>),
}

#[derive(Clone, Debug)]
struct Node<T: Real> {
    label: String,
    source: Source<T>,
    inputs: Vec<NodeId>,
    shape: Vec<usize>,
    requires_grad: bool,
    value: Option<Vec<T>>,
    saved: Saved<T>,
}

/// Parameter gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<T> {
    map: IndexMap<String, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.map.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<T>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Vec<T>) {
        self.map.insert(name.into(), grad);
    }

    /// Largest absolute gradient entry across all parameters.
    pub fn max_abs(&self) -> T {
        self.map
            .values()
            .flatten()
            .fold(T::zero(), |m, &v| m.max(v.abs()))
    }
}

/// Computation graph: declared first, then evaluated by [`Graph::forward`]
/// and differentiated by [`Graph::backward`]. Node ids are assigned in
/// declaration order, which is also a valid topological order.
#[derive(Clone, Debug)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    params: IndexMap<String, NodeId>,
    outputs: IndexMap<String, NodeId>,
    mode: Mode,
    seed: u64,
    step: u64,
    evaluated: bool,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Graph<T> {
    /// `seed` and `step` key the dropout streams.
    pub fn new(mode: Mode, seed: u64, step: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            params: IndexMap::new(),
            outputs: IndexMap::new(),
            mode,
            seed,
            step,
            evaluated: false,
            grads: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id.0].label
    }

    /// Rename a node for error messages and debugging.
    pub fn set_label(&mut self, id: NodeId, label: impl Into<String>) {
        self.nodes[id.0].label = label.into();
    }

    fn push(
        &mut self,
        label: String,
        source: Source<T>,
        inputs: Vec<NodeId>,
        shape: Vec<usize>,
        rg: bool,
    ) -> NodeId {
        self.evaluated = false;
        self.nodes.push(Node {
            label,
            source,
            inputs,
            shape,
            requires_grad: rg,
            value: None,
            saved: Saved::None,
        });
        NodeId(self.nodes.len() - 1)
    }

    // ── leaves ──────────────────────────────────────────────────────────

    /// Input fed at [`Graph::forward`] time.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        let src = Source::Input {
            name: name.to_string(),
            bound: None,
            grad: false,
        };
        self.push(name.to_string(), src, vec![], shape.to_vec(), false)
    }

    /// Input whose gradient is kept after backward (e.g. for attributions).
    pub fn input_with_grad(&mut self, name: &str, shape: &[usize]) -> NodeId {
        let src = Source::Input {
            name: name.to_string(),
            bound: None,
            grad: true,
        };
        self.push(name.to_string(), src, vec![], shape.to_vec(), true)
    }

    /// Input bound to a value now; a feed at forward time may override it.
    pub fn input_value(&mut self, name: &str, value: &Tensor<T>, with_grad: bool) -> NodeId {
        let src = Source::Input {
            name: name.to_string(),
            bound: Some(value.data().to_vec()),
            grad: with_grad,
        };
        self.push(
            name.to_string(),
            src,
            vec![],
            value.shape().to_vec(),
            with_grad,
        )
    }

    /// Parameter read from `store` at forward time. Referencing the same
    /// name twice returns the same node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let t = store.get(name)?;
        let id = self.push(
            name.to_string(),
            Source::Param {
                name: name.to_string(),
            },
            vec![],
            t.shape().to_vec(),
            t.requires_grad,
        );
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn constant(&mut self, value: &Tensor<T>) -> NodeId {
        let label = format!("const#{}", self.nodes.len());
        self.push(
            label,
            Source::Const(value.data().to_vec()),
            vec![],
            value.shape().to_vec(),
            false,
        )
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(&Tensor::scalar(T::of(v)))
    }

    /// Name an output so [`Graph::forward`] returns it.
    pub fn mark_output(&mut self, name: &str, id: NodeId) {
        self.outputs.insert(name.to_string(), id);
    }

    // ── operations ──────────────────────────────────────────────────────

    pub fn op(&mut self, op: OpKind<T>, inputs: &[NodeId]) -> Result<NodeId> {
        let shapes: Vec<&[usize]> = inputs
            .iter()
            .map(|i| self.nodes[i.0].shape.as_slice())
            .collect();
        let shape = op.infer_shape(&shapes).map_err(|detail| {
            let names: Vec<String> = inputs
                .iter()
                .map(|i| {
                    format!(
                        "'{}'(#{}) {:?}",
                        self.nodes[i.0].label, i.0, self.nodes[i.0].shape
                    )
                })
                .collect();
            Error::shape(
                op.name(),
                format!("{detail} [inputs: {}]", names.join(", ")),
            )
        })?;
        let rg =
            !matches!(op, OpKind::Detach) && inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let label = format!("{}#{}", op.name(), self.nodes.len());
        Ok(self.push(label, Source::Op(op), inputs.to_vec(), shape, rg))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.op(
            OpKind::MatMul {
                trans_a: false,
                trans_b: false,
            },
            &[a, b],
        )
    }

    /// `a · bᵀ` over the last two axes.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.op(
            OpKind::MatMul {
                trans_a: false,
                trans_b: true,
            },
            &[a, b],
        )
    }

    pub fn matmul_ex(
        &mut self,
        a: NodeId,
        b: NodeId,
        trans_a: bool,
        trans_b: bool,
    ) -> Result<NodeId> {
        self.op(OpKind::MatMul { trans_a, trans_b }, &[a, b])
    }

    /// `x · w + b` with `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.op(OpKind::Conv1d { stride, padding }, &inputs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.op(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.op(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.op(OpKind::Scale(c), &[x])
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        self.op(OpKind::LayerNorm { eps }, &[x, gain, bias])
    }

    pub fn softmax(&mut self, x: NodeId, temperature: f64) -> Result<NodeId> {
        self.op(
            OpKind::Softmax {
                temperature,
                mask: None,
            },
            &[x],
        )
    }

    pub fn softmax_masked(&mut self, x: NodeId, temperature: f64, mask: KeyMask) -> Result<NodeId> {
        self.op(
            OpKind::Softmax {
                temperature,
                mask: Some(mask),
            },
            &[x],
        )
    }

    pub fn log_softmax(&mut self, x: NodeId, temperature: f64) -> Result<NodeId> {
        self.op(OpKind::LogSoftmax { temperature }, &[x])
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        self.op(OpKind::Activation(Activation::Gelu), &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.op(OpKind::Activation(Activation::Relu), &[x])
    }

    pub fn dropout(&mut self, x: NodeId, p: f64) -> Result<NodeId> {
        if p == 0.0 {
            return Ok(x);
        }
        self.op(OpKind::Dropout { p }, &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.op(OpKind::Sum { axis: None }, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.op(OpKind::Mean { axis: None }, &[x])
    }

    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.op(OpKind::Sum { axis: Some(axis) }, &[x])
    }

    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.op(OpKind::Mean { axis: Some(axis) }, &[x])
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        self.op(OpKind::Concat { axis }, xs)
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        self.op(OpKind::Slice { axis, start, end }, &[x])
    }

    pub fn expand(&mut self, x: NodeId, count: usize) -> Result<NodeId> {
        self.op(OpKind::Expand { count }, &[x])
    }

    pub fn l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        self.op(OpKind::L2Normalize { eps: 1e-12 }, &[x])
    }

    pub fn log(&mut self, x: NodeId, floor: f64) -> Result<NodeId> {
        self.op(OpKind::Log { floor }, &[x])
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.op(OpKind::Exp, &[x])
    }

    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        self.op(OpKind::Permute(perm.to_vec()), &[x])
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::shape(
                "transpose",
                format!("rank {r} < 2 for '{}'", self.label(x)),
            ));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        self.op(OpKind::Reshape(shape.to_vec()), &[x])
    }

    pub fn embedding(
        &mut self,
        table: NodeId,
        ids: &[usize],
        ids_shape: &[usize],
    ) -> Result<NodeId> {
        self.op(
            OpKind::Embedding {
                ids: ids.to_vec(),
                ids_shape: ids_shape.to_vec(),
            },
            &[table],
        )
    }

    pub fn nll(&mut self, logp: NodeId, targets: &[usize]) -> Result<NodeId> {
        self.op(
            OpKind::Nll {
                targets: targets.to_vec(),
            },
            &[logp],
        )
    }

    /// Mean cross-entropy of `logits[N, C]` against integer targets.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let lp = self.log_softmax(logits, 1.0)?;
        self.nll(lp, targets)
    }

    /// Cross-entropy against target distributions `q[N, C]`, averaged over
    /// rows whose target mass is nonzero.
    pub fn soft_cross_entropy(&mut self, logits: NodeId, targets: &Tensor<T>) -> Result<NodeId> {
        let shape = self.shape(logits).to_vec();
        if targets.shape() != shape.as_slice() || shape.len() != 2 {
            return Err(Error::shape(
                "soft_cross_entropy",
                format!("logits {:?} vs targets {:?}", shape, targets.shape()),
            ));
        }
        let active = targets
            .data()
            .chunks(shape[1])
            .filter(|r| r.iter().any(|v| *v != T::zero()))
            .count();
        if active == 0 {
            return Err(Error::Invalid(
                "soft_cross_entropy: every target row is empty".into(),
            ));
        }
        let lp = self.log_softmax(logits, 1.0)?;
        let q = self.constant(targets);
        let prod = self.mul(lp, q)?;
        let total = self.sum(prod)?;
        self.scale(total, -1.0 / active as f64)
    }

    pub fn detach(&mut self, x: NodeId) -> Result<NodeId> {
        self.op(OpKind::Detach, &[x])
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp<T>>, inputs: &[NodeId]) -> Result<NodeId> {
        self.op(OpKind::Custom(op), inputs)
    }

    // ── evaluation ──────────────────────────────────────────────────────

    /// Evaluate every node once, in declaration order. `feed` binds input
    /// names to values (overriding values bound at declaration).
    pub fn forward(
        &mut self,
        store: &ParamStore<T>,
        feed: &[(&str, &Tensor<T>)],
    ) -> Result<IndexMap<String, Tensor<T>>> {
        self.evaluated = false;
        self.grads.clear();
        let ctx_train = self.mode == Mode::Train;
        for i in 0..self.nodes.len() {
            let (value, saved) = match &self.nodes[i].source {
                Source::Input { name, bound, .. } => {
                    let v = match feed.iter().find(|(n, _)| n == name) {
                        Some((_, t)) => {
                            if t.shape() != self.nodes[i].shape.as_slice() {
                                return Err(Error::shape(
                                    "input",
                                    format!(
                                        "feed for '{name}' has shape {:?}, node #{i} declares {:?}",
                                        t.shape(),
                                        self.nodes[i].shape
                                    ),
                                ));
                            }
                            t.data().to_vec()
                        }
                        None => bound
                            .clone()
                            .ok_or_else(|| Error::MissingInput(name.clone()))?,
                    };
                    (v, Saved::None)
                }
                Source::Param { name } => {
                    let t = store.get(name)?;
                    if t.shape() != self.nodes[i].shape.as_slice() {
                        return Err(Error::shape(
                            "param",
                            format!(
                                "store holds '{name}' as {:?}, node #{i} declares {:?}",
                                t.shape(),
                                self.nodes[i].shape
                            ),
                        ));
                    }
                    (t.data().to_vec(), Saved::None)
                }
                Source::Const(v) => (v.clone(), Saved::None),
                Source::Op(op) => {
                    let node = &self.nodes[i];
                    let xs: Vec<&[T]> = node
                        .inputs
                        .iter()
                        .map(|j| self.nodes[j.0].value.as_deref().expect("topological order"))
                        .collect();
                    let ss: Vec<&[usize]> = node
                        .inputs
                        .iter()
                        .map(|j| self.nodes[j.0].shape.as_slice())
                        .collect();
                    let ctx = Ctx {
                        train: ctx_train,
                        seed: self.seed,
                        step: self.step,
                        node: i as u64,
                    };
                    ops::forward(op, &xs, &ss, &node.shape, &ctx)
                }
            };
            if value.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    node: i,
                    label: self.nodes[i].label.clone(),
                });
            }
            self.nodes[i].value = Some(value);
            self.nodes[i].saved = saved;
        }
        self.evaluated = true;
        let mut out = IndexMap::new();
        for (name, id) in &self.outputs {
            out.insert(name.clone(), self.tensor(*id)?);
        }
        Ok(out)
    }

    /// Forward with no feed.
    pub fn run(&mut self, store: &ParamStore<T>) -> Result<()> {
        self.forward(store, &[]).map(|_| ())
    }

    pub fn is_evaluated(&self) -> bool {
        self.evaluated
    }

    pub fn data(&self, id: NodeId) -> Result<&[T]> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        Ok(self.nodes[id.0]
            .value
            .as_deref()
            .expect("evaluated graph has values"))
    }

    pub fn tensor(&self, id: NodeId) -> Result<Tensor<T>> {
        Tensor::new(self.nodes[id.0].shape.clone(), self.data(id)?.to_vec())
    }

    pub fn scalar_value(&self, id: NodeId) -> Result<T> {
        let d = self.data(id)?;
        if d.len() != 1 {
            return Err(Error::NotScalar {
                label: self.nodes[id.0].label.clone(),
                shape: self.nodes[id.0].shape.clone(),
            });
        }
        Ok(d[0])
    }

    /// Reverse-mode sweep from a scalar `loss`. Returns gradients for every
    /// trainable parameter referenced by the graph (zeros when the loss
    /// does not depend on it).
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<T>> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        let ln = &self.nodes[loss.0];
        if ln.shape.iter().product::<usize>() != 1 {
            return Err(Error::NotScalar {
                label: ln.label.clone(),
                shape: ln.shape.clone(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Source::Op(op) = &node.source {
                if node.requires_grad {
                    let need: Vec<bool> = node
                        .inputs
                        .iter()
                        .map(|j| self.nodes[j.0].requires_grad)
                        .collect();
                    if need.iter().any(|&b| b) {
                        let xs: Vec<&[T]> = node
                            .inputs
                            .iter()
                            .map(|j| self.nodes[j.0].value.as_deref().unwrap())
                            .collect();
                        let ss: Vec<&[usize]> = node
                            .inputs
                            .iter()
                            .map(|j| self.nodes[j.0].shape.as_slice())
                            .collect();
                        let out = node.value.as_deref().unwrap();
                        let gs =
                            ops::backward(op, &xs, &ss, out, &node.shape, &dy, &node.saved, &need);
                        for ((j, g), &nd) in node.inputs.iter().zip(gs).zip(&need) {
                            let Some(g) = g.filter(|_| nd) else { continue };
                            match &mut grads[j.0] {
                                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                                slot => *slot = Some(g),
                            }
                        }
                    }
                }
            }
            grads[i] = Some(dy);
        }
        let mut out = Gradients::default();
        for (name, id) in &self.params {
            let node = &self.nodes[id.0];
            if !node.requires_grad {
                continue;
            }
            let g = grads[id.0]
                .clone()
                .unwrap_or_else(|| vec![T::zero(); node.shape.iter().product()]);
            out.insert(name.clone(), g);
        }
        self.grads = grads;
        Ok(out)
    }

    /// Gradient of the last backward's loss w.r.t. any node (inputs
    /// declared with gradients, parameters, intermediates).
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Whether an input node was declared as wanting its gradient.
    pub fn input_keeps_grad(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].source, Source::Input { grad: true, .. })
    }

    /// Names of the parameters this graph reads.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn identity_graph_returns_input() {
        let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
        let x = g.input("x", &[3]);
        g.mark_output("y", x);
        let out = g
            .forward(&ParamStore::new(), &[("x", &t(&[3], &[1.0, -2.0, 3.5]))])
            .unwrap();
        assert_eq!(out["y"].data(), &[1.0, -2.0, 3.5]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
        let x = g.input_value("x", &t(&[3], &[0.0, 0.0, 0.0]), false);
        let y = g.softmax(x, 1.0).unwrap();
        g.run(&ParamStore::new()).unwrap();
        for v in g.data(y).unwrap() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_by_identity() {
        let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
        let a = g.input_value("a", &t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let i = g.input_value("i", &t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), false);
        let c = g.matmul(a, i).unwrap();
        g.run(&ParamStore::new()).unwrap();
        assert_eq!(g.data(c).unwrap(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_names_both_nodes() {
        let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
        let a = g.input("left", &[2, 3]);
        let b = g.input("right", &[4, 5]);
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("left") && err.contains("right"), "{err}");
    }

    #[test]
    fn non_finite_reports_node() {
        let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
        let x = g.input_value("x", &t(&[2], &[1.0, 0.0]), false);
        let y = g.log(x, 0.0).unwrap();
        g.set_label(y, "logx");
        match g.run(&ParamStore::new()) {
            Err(Error::NonFinite { node, label }) => {
                assert_eq!(node, y.index());
                assert_eq!(label, "logx");
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut store = ParamStore::new();
        store.insert("x", t(&[3], &[0.3, -1.0, 2.0]).trainable());
        let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
        let x = g.param(&store, "x").unwrap();
        let l = g.sum(x).unwrap();
        g.run(&store).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get("x").unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn mean_square_gradient() {
        // d/dx mean(x^2) = 2x/n = x for n = 2
        let mut store = ParamStore::new();
        store.insert("x", t(&[2], &[1.0, 2.0]).trainable());
        let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
        let x = g.param(&store, "x").unwrap();
        let sq = g.mul(x, x).unwrap();
        let l = g.mean(sq).unwrap();
        g.run(&store).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get("x").unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn untouched_param_gets_zero_grad() {
        let mut store = ParamStore::new();
        store.insert("used", t(&[2], &[1.0, 2.0]).trainable());
        store.insert("unused", t(&[2], &[5.0, 6.0]).trainable());
        let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
        let a = g.param(&store, "used").unwrap();
        let _b = g.param(&store, "unused").unwrap();
        let l = g.sum(a).unwrap();
        g.run(&store).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get("unused").unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_requires_forward_and_scalar() {
        let mut store = ParamStore::new();
        store.insert("x", t(&[2], &[1.0, 2.0]).trainable());
        let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
        let x = g.param(&store, "x").unwrap();
        let l = g.sum(x).unwrap();
        assert!(matches!(g.backward(l), Err(Error::BackwardBeforeForward)));
        g.run(&store).unwrap();
        assert!(matches!(g.backward(x), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn dropout_is_identity_in_eval_and_seeded_in_train() {
        let x = t(&[64], &(0..64).map(|v| v as f64 + 1.0).collect::<Vec<_>>());
        let run = |mode, seed| {
            let mut g = Graph::<f64>::new(mode, seed, 3);
            let xi = g.input_value("x", &x, false);
            let y = g.dropout(xi, 0.5).unwrap();
            g.run(&ParamStore::new()).unwrap();
            g.data(y).unwrap().to_vec()
        };
        assert_eq!(run(Mode::Eval, 1), x.data());
        assert_eq!(run(Mode::Train, 1), run(Mode::Train, 1));
        assert_ne!(run(Mode::Train, 1), run(Mode::Train, 2));
        let dropped = run(Mode::Train, 1).iter().filter(|v| **v == 0.0).count();
        assert!(dropped > 16 && dropped < 48, "{dropped}");
    }

    #[test]
    fn masked_softmax_zeroes_masked_keys() {
        let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
        let x = g.input_value("x", &t(&[2, 3], &[1.0, 2.0, 3.0, 0.5, 0.1, -4.0]), false);
        let mask = KeyMask {
            keep: vec![true, true, false, true, false, false],
            rows_per_item: 1,
        };
        let y = g.softmax_masked(x, 1.0, mask).unwrap();
        g.run(&ParamStore::new()).unwrap();
        let y = g.data(y).unwrap();
        assert_eq!(y[2], 0.0);
        assert_eq!(&y[4..], &[0.0, 0.0]);
        assert!((y[0] + y[1] - 1.0).abs() < 1e-15);
        assert_eq!(y[3], 1.0);
    }
}
