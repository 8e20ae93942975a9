//! A catalogue of small graphs, one per differentiable primitive, used to
//! verify every backward rule against finite differences.

use std::sync::Arc;

use crate::error::Result;
use crate::gradcheck::{finite_diff_check, GradCheckReport};
use crate::graph::{Graph, Mode, NodeId};
use crate::init::Initializer;
use crate::ops::{CustomOp, KeyMask};
use crate::store::ParamStore;
use crate::tensor::Tensor;

pub struct OpCase {
    pub name: &'static str,
    pub graph: Graph<f64>,
    pub store: ParamStore<f64>,
    pub loss: NodeId,
}

impl OpCase {
    pub fn check(&mut self, h: f64, tolerance: f64) -> Result<GradCheckReport> {
        finite_diff_check(&mut self.graph, &mut self.store, self.loss, h, tolerance)
    }
}

/// Elementwise square with a configurable backward slope. `slope = 2` is
/// the true derivative; anything else is a broken rule.
#[derive(Debug)]
pub struct SquareOp {
    pub slope: f64,
}

impl CustomOp<f64> for SquareOp {
    fn name(&self) -> &str {
        "square"
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>, String> {
        match inputs {
            [s] => Ok(s.to_vec()),
            _ => Err(format!("square takes 1 input, got {}", inputs.len())),
        }
    }

    fn forward(&self, inputs: &[&[f64]], _shapes: &[&[usize]]) -> Vec<f64> {
        inputs[0].iter().map(|v| v * v).collect()
    }

    fn backward(
        &self,
        inputs: &[&[f64]],
        _shapes: &[&[usize]],
        _output: &[f64],
        dy: &[f64],
    ) -> Vec<Vec<f64>> {
        vec![inputs[0]
            .iter()
            .zip(dy)
            .map(|(x, g)| self.slope * x * g)
            .collect()]
    }
}

struct Builder {
    g: Graph<f64>,
    store: ParamStore<f64>,
    init: Initializer,
}

impl Builder {
    fn new(seed: u64, mode: Mode) -> Self {
        Builder {
            g: Graph::new(mode, seed, 3),
            store: ParamStore::new(),
            init: Initializer::new(seed),
        }
    }

    fn param_in(&mut self, name: &str, shape: &[usize], lo: f64, hi: f64) -> Result<NodeId> {
        let t = self.init.uniform(shape, lo, hi);
        self.store.insert(name, t);
        self.g.param(&self.store, name)
    }

    fn param(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        self.param_in(name, shape, -2.0, 2.0)
    }

    /// `sum(out ⊙ w)` with fixed random `w`, so no output direction is
    /// invisible to the check (a plain sum of a softmax is constant).
    fn finish(mut self, name: &'static str, out: NodeId) -> Result<OpCase> {
        let shape = self.g.shape(out).to_vec();
        let w: Tensor<f64> = self.init.uniform(&shape, -1.0, 1.0);
        let w = self.g.constant(&w.frozen());
        let prod = self.g.mul(out, w)?;
        let loss = self.g.sum(prod)?;
        Ok(OpCase {
            name,
            graph: self.g,
            store: self.store,
            loss,
        })
    }

    fn finish_scalar(self, name: &'static str, loss: NodeId) -> Result<OpCase> {
        Ok(OpCase {
            name,
            graph: self.g,
            store: self.store,
            loss,
        })
    }
}

type CaseFn = fn(&mut Builder) -> Result<NodeId>;

fn unary(b: &mut Builder, f: impl Fn(&mut Graph<f64>, NodeId) -> Result<NodeId>) -> Result<NodeId> {
    let x = b.param("x", &[3, 4])?;
    f(&mut b.g, x)
}

const CASES: &[(&str, CaseFn)] = &[
    ("matmul", |b| {
        let a = b.param("a", &[2, 3, 4])?;
        let c = b.param("b", &[2, 4, 5])?;
        b.g.matmul(a, c)
    }),
    ("matmul_shared_rhs", |b| {
        let a = b.param("a", &[2, 3, 4])?;
        let c = b.param("b", &[4, 5])?;
        b.g.matmul(a, c)
    }),
    ("matmul_trans_a", |b| {
        let a = b.param("a", &[4, 3])?;
        let c = b.param("b", &[4, 5])?;
        b.g.matmul_ex(a, c, true, false)
    }),
    ("matmul_trans_b", |b| {
        let a = b.param("a", &[2, 3, 4])?;
        let c = b.param("b", &[2, 5, 4])?;
        b.g.matmul_nt(a, c)
    }),
    ("linear", |b| {
        let x = b.param("x", &[3, 4])?;
        let w = b.param("w", &[4, 2])?;
        let bias = b.param("bias", &[2])?;
        b.g.linear(x, w, Some(bias))
    }),
    ("conv1d", |b| {
        let x = b.param("x", &[2, 2, 9])?;
        let w = b.param("w", &[3, 2, 3])?;
        let bias = b.param("bias", &[3])?;
        b.g.conv1d(x, w, Some(bias), 2, 1)
    }),
    ("add", |b| {
        let x = b.param("x", &[3, 4])?;
        let y = b.param("y", &[3, 4])?;
        b.g.add(x, y)
    }),
    ("add_broadcast", |b| {
        let x = b.param("x", &[2, 3, 4])?;
        let y = b.param("y", &[4])?;
        b.g.add(x, y)
    }),
    ("add_scalar", |b| {
        let x = b.param("x", &[3, 4])?;
        let y = b.param("y", &[])?;
        b.g.add(x, y)
    }),
    ("sub", |b| {
        let x = b.param("x", &[3, 4])?;
        let y = b.param("y", &[3, 4])?;
        b.g.sub(x, y)
    }),
    ("mul", |b| {
        let x = b.param("x", &[3, 4])?;
        let y = b.param("y", &[3, 4])?;
        b.g.mul(x, y)
    }),
    ("mul_broadcast", |b| {
        let x = b.param("x", &[2, 3, 4])?;
        let y = b.param("y", &[3, 4])?;
        b.g.mul(x, y)
    }),
    ("scale", |b| unary(b, |g, x| g.scale(x, -1.7))),
    ("layer_norm", |b| {
        let x = b.param("x", &[3, 5])?;
        let gain = b.param("gain", &[5])?;
        let bias = b.param("bias", &[5])?;
        b.g.layer_norm(x, gain, bias, 1e-5)
    }),
    ("softmax", |b| unary(b, |g, x| g.softmax(x, 0.7))),
    ("softmax_masked", |b| {
        let x = b.param("x", &[2, 3, 4])?;
        let mask = KeyMask {
            keep: vec![true, true, false, true, true, false, false, true],
            rows_per_item: 3,
        };
        b.g.softmax_masked(x, 1.3, mask)
    }),
    ("log_softmax", |b| unary(b, |g, x| g.log_softmax(x, 1.5))),
    ("gelu", |b| unary(b, |g, x| g.gelu(x))),
    ("relu", |b| unary(b, |g, x| g.relu(x))),
    ("dropout", |b| unary(b, |g, x| g.dropout(x, 0.3))),
    ("sum", |b| unary(b, |g, x| g.sum(x))),
    ("sum_axis", |b| {
        let x = b.param("x", &[2, 3, 4])?;
        b.g.sum_axis(x, 1)
    }),
    ("mean", |b| unary(b, |g, x| g.mean(x))),
    ("mean_axis", |b| {
        let x = b.param("x", &[2, 3, 4])?;
        b.g.mean_axis(x, 2)
    }),
    ("concat", |b| {
        let x = b.param("x", &[2, 1, 4])?;
        let y = b.param("y", &[2, 3, 4])?;
        b.g.concat(&[x, y], 1)
    }),
    ("slice", |b| {
        let x = b.param("x", &[2, 5, 3])?;
        b.g.slice(x, 1, 1, 4)
    }),
    ("expand", |b| {
        let x = b.param("x", &[3, 4])?;
        b.g.expand(x, 3)
    }),
    ("l2_normalize", |b| unary(b, |g, x| g.l2_normalize(x))),
    ("log", |b| {
        let x = b.param_in("x", &[3, 4], 0.5, 2.0)?;
        b.g.log(x, 1e-12)
    }),
    ("exp", |b| unary(b, |g, x| g.exp(x))),
    ("permute", |b| {
        let x = b.param("x", &[2, 3, 4])?;
        b.g.permute(x, &[2, 0, 1])
    }),
    ("transpose", |b| {
        let x = b.param("x", &[2, 3, 4])?;
        b.g.transpose(x)
    }),
    ("reshape", |b| {
        let x = b.param("x", &[2, 3, 4])?;
        b.g.reshape(x, &[6, 4])
    }),
    ("embedding", |b| {
        let table = b.param("table", &[5, 3])?;
        b.g.embedding(table, &[4, 0, 4, 2, 1, 4], &[2, 3])
    }),
    ("custom", |b| {
        let x = b.param("x", &[3, 4])?;
        b.g.custom(Arc::new(SquareOp { slope: 2.0 }), &[x])
    }),
    ("layer_norm_softmax_chain", |b| {
        let x = b.param("x", &[3, 5])?;
        let gain = b.param("gain", &[5])?;
        let bias = b.param("bias", &[5])?;
        let n = b.g.layer_norm(x, gain, bias, 1e-5)?;
        b.g.softmax(n, 1.0)
    }),
];

const LOSS_CASES: &[(&str, CaseFn)] = &[
    ("nll", |b| {
        let x = b.param("x", &[4, 3])?;
        let lp = b.g.log_softmax(x, 1.0)?;
        b.g.nll(lp, &[0, 2, 1, 2])
    }),
    ("cross_entropy", |b| {
        let x = b.param("x", &[4, 3])?;
        b.g.cross_entropy(x, &[1, 1, 0, 2])
    }),
    ("soft_cross_entropy", |b| {
        let x = b.param("x", &[3, 4])?;
        let targets = Tensor::from_f64(
            &[3, 4],
            &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.2, 0.3, 0.4],
        )?;
        b.g.soft_cross_entropy(x, &targets)
    }),
];

/// One case per primitive (plus the composite chains; `Detach` is
/// covered separately since finite differences see through it), all in 64-bit with
/// inputs uniform in `[-2, 2]`.
pub fn op_cases(seed: u64) -> Result<Vec<OpCase>> {
    let mut out = Vec::new();
    for (i, (name, f)) in CASES.iter().enumerate() {
        let mut b = Builder::new(seed.wrapping_add(i as u64), Mode::Train);
        let y = f(&mut b)?;
        out.push(b.finish(name, y)?);
    }
    for (i, (name, f)) in LOSS_CASES.iter().enumerate() {
        let mut b = Builder::new(seed.wrapping_add(1000 + i as u64), Mode::Train);
        let y = f(&mut b)?;
        out.push(b.finish_scalar(name, y)?);
    }
    Ok(out)
}

/// The same square op with its derivative off by a factor of 1.5.
pub fn corrupted_case(seed: u64) -> Result<OpCase> {
    let mut b = Builder::new(seed, Mode::Eval);
    let x = b.param("x", &[3, 4])?;
    let y = b.g.custom(Arc::new(SquareOp { slope: 3.0 }), &[x])?;
    b.finish("corrupted_square", y)
}

pub fn run_op_suite(
    seed: u64,
    h: f64,
    tolerance: f64,
) -> Result<Vec<(&'static str, GradCheckReport)>> {
    op_cases(seed)?
        .into_iter()
        .map(|mut c| Ok((c.name, c.check(h, tolerance)?)))
        .collect()
}
