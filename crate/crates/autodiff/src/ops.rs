//! Operation kinds with their shape rule, forward kernel and backward rule.

use std::fmt::Debug;
use std::sync::Arc;

use crate::kernels::{dot, gemm, inverse_perm, permute, split_axis};
use crate::real::Real;
use crate::rng::counter_uniform;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// tanh approximation of GELU.
    Gelu,
    Relu,
}

/// Key-padding mask for a softmax over the last axis. Row `r` of the
/// input belongs to batch item `r / rows_per_item`; `keep[item * keys + j]`
/// says whether key `j` takes part.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyMask {
    pub keep: Vec<bool>,
    pub rows_per_item: usize,
}

/// User-defined operation with an explicit backward rule.
pub trait CustomOp<T: Real>: Send + Sync + Debug {
    fn name(&self) -> &str;
    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>, String>;
    fn forward(&self, inputs: &[&[T]], shapes: &[&[usize]]) -> Vec<T>;
    /// Vector-Jacobian products, one buffer per input.
    fn backward(
        &self,
        inputs: &[&[T]],
        shapes: &[&[usize]],
        output: &[T],
        grad_output: &[T],
    ) -> Vec<Vec<T>>;
}

/// Every differentiable primitive the engine knows.
#[derive(Clone, Debug)]
pub enum OpKind<T: Real> {
    /// `a[..., m, k] · b[..., k, n]`; `b` may also be a shared rank-2 matrix.
    MatMul {
        trans_a: bool,
        trans_b: bool,
    },
    /// `x[N, Cin, L] * w[Cout, Cin, K] (+ bias[Cout])`.
    Conv1d {
        stride: usize,
        padding: usize,
    },
    /// `a + b` with `b` a scalar or a trailing-suffix broadcast of `a`.
    Add,
    /// `a ⊙ b`, same broadcast rule as `Add`.
    Mul,
    Scale(f64),
    /// Normalize the last axis, then `gain ⊙ x̂ + bias`.
    LayerNorm {
        eps: f64,
    },
    /// `softmax(x / temperature)` along the last axis.
    Softmax {
        temperature: f64,
        mask: Option<KeyMask>,
    },
    LogSoftmax {
        temperature: f64,
    },
    Activation(Activation),
    /// Inverted dropout; identity in eval mode.
    Dropout {
        p: f64,
    },
    Sum {
        axis: Option<usize>,
    },
    Mean {
        axis: Option<usize>,
    },
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
        end: usize,
    },
    /// Tile a tensor `count` times along a new leading axis.
    Expand {
        count: usize,
    },
    /// Divide each last-axis row by its L2 norm.
    L2Normalize {
        eps: f64,
    },
    /// `ln(max(x, floor))`.
    Log {
        floor: f64,
    },
    Exp,
    Permute(Vec<usize>),
    Reshape(Vec<usize>),
    /// Row gather from a `[vocab, dim]` table.
    Embedding {
        ids: Vec<usize>,
        ids_shape: Vec<usize>,
    },
    /// Mean negative log-likelihood of `logp[N, C]` at integer targets.
    Nll {
        targets: Vec<usize>,
    },
    /// Identity forward, zero backward.
    Detach,
    Custom(Arc<dyn CustomOp<T>>),
}

impl<T: Real> OpKind<T> {
    pub fn name(&self) -> &str {
        match self {
            OpKind::MatMul { .. } => "matmul",
            OpKind::Conv1d { .. } => "conv1d",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::LayerNorm { .. } => "layer_norm",
            OpKind::Softmax { .. } => "softmax",
            OpKind::LogSoftmax { .. } => "log_softmax",
            OpKind::Activation(Activation::Gelu) => "gelu",
            OpKind::Activation(Activation::Relu) => "relu",
            OpKind::Dropout { .. } => "dropout",
            OpKind::Sum { .. } => "sum",
            OpKind::Mean { .. } => "mean",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Expand { .. } => "expand",
            OpKind::L2Normalize { .. } => "l2_normalize",
            OpKind::Log { .. } => "log",
            OpKind::Exp => "exp",
            OpKind::Permute(_) => "permute",
            OpKind::Reshape(_) => "reshape",
            OpKind::Embedding { .. } => "embedding",
            OpKind::Nll { .. } => "nll",
            OpKind::Detach => "detach",
            OpKind::Custom(c) => c.name(),
        }
    }

    /// Output shape, or a description of the mismatch.
    pub(crate) fn infer_shape(&self, s: &[&[usize]]) -> Result<Vec<usize>, String> {
        let arity = |n: usize| -> Result<(), String> {
            if s.len() == n {
                Ok(())
            } else {
                Err(format!("expected {n} inputs, got {}", s.len()))
            }
        };
        match self {
            OpKind::MatMul { trans_a, trans_b } => {
                arity(2)?;
                let (a, b) = (s[0], s[1]);
                if a.len() < 2 || b.len() < 2 {
                    return Err(format!("operands must have rank >= 2, got {a:?} and {b:?}"));
                }
                let (m, ka) = mat_dims(a, *trans_a);
                let (kb, n) = {
                    let (r, c) = mat_dims(b, false);
                    if *trans_b {
                        (c, r)
                    } else {
                        (r, c)
                    }
                };
                if ka != kb {
                    return Err(format!(
                        "inner dimensions differ: {a:?} (k={ka}) vs {b:?} (k={kb})"
                    ));
                }
                let batch_a = &a[..a.len() - 2];
                if b.len() > 2 && &b[..b.len() - 2] != batch_a {
                    return Err(format!("batch dimensions differ: {a:?} vs {b:?}"));
                }
                let mut out = batch_a.to_vec();
                out.push(m);
                out.push(n);
                Ok(out)
            }
            OpKind::Conv1d { stride, padding } => {
                if s.len() != 2 && s.len() != 3 {
                    return Err(format!("expected 2 or 3 inputs, got {}", s.len()));
                }
                let (x, w) = (s[0], s[1]);
                if x.len() != 3 || w.len() != 3 {
                    return Err(format!(
                        "input must be [N,Cin,L] and weight [Cout,Cin,K], got {x:?} and {w:?}"
                    ));
                }
                if x[1] != w[1] {
                    return Err(format!("channel mismatch: input {x:?} vs weight {w:?}"));
                }
                if s.len() == 3 && s[2] != [w[0]] {
                    return Err(format!(
                        "bias {:?} does not match {} output channels",
                        s[2], w[0]
                    ));
                }
                if *stride == 0 {
                    return Err("stride must be positive".into());
                }
                let padded = x[2] + 2 * padding;
                if padded < w[2] {
                    return Err(format!(
                        "kernel {} longer than padded input {}",
                        w[2], padded
                    ));
                }
                Ok(vec![x[0], w[0], (padded - w[2]) / stride + 1])
            }
            OpKind::Add | OpKind::Mul => {
                arity(2)?;
                let (a, b) = (s[0], s[1]);
                let bn: usize = b.iter().product();
                if bn == 1 || (b.len() <= a.len() && &a[a.len() - b.len()..] == b) {
                    Ok(a.to_vec())
                } else {
                    Err(format!("cannot broadcast {b:?} onto {a:?}"))
                }
            }
            OpKind::LayerNorm { .. } => {
                arity(3)?;
                let d = *s[0].last().ok_or("layer_norm input must have rank >= 1")?;
                if s[1] != [d] || s[2] != [d] {
                    return Err(format!("gain {:?}/bias {:?} must be [{d}]", s[1], s[2]));
                }
                Ok(s[0].to_vec())
            }
            OpKind::Softmax { temperature, mask } => {
                arity(1)?;
                if *temperature <= 0.0 {
                    return Err(format!("temperature must be positive, got {temperature}"));
                }
                let keys = *s[0].last().ok_or("softmax input must have rank >= 1")?;
                if let Some(m) = mask {
                    let rows: usize = s[0][..s[0].len() - 1].iter().product();
                    if m.rows_per_item == 0 || rows % m.rows_per_item != 0 {
                        return Err("mask rows_per_item does not divide the row count".into());
                    }
                    if m.keep.len() != rows / m.rows_per_item * keys {
                        return Err(format!(
                            "mask length {} does not match {:?}",
                            m.keep.len(),
                            s[0]
                        ));
                    }
                }
                Ok(s[0].to_vec())
            }
            OpKind::LogSoftmax { temperature } => {
                arity(1)?;
                if *temperature <= 0.0 {
                    return Err(format!("temperature must be positive, got {temperature}"));
                }
                if s[0].is_empty() {
                    return Err("log_softmax input must have rank >= 1".into());
                }
                Ok(s[0].to_vec())
            }
            OpKind::Dropout { p } => {
                arity(1)?;
                if !(0.0..1.0).contains(p) {
                    return Err(format!("dropout probability {p} outside [0,1)"));
                }
                Ok(s[0].to_vec())
            }
            OpKind::Scale(_)
            | OpKind::Activation(_)
            | OpKind::Exp
            | OpKind::Log { .. }
            | OpKind::Detach => {
                arity(1)?;
                Ok(s[0].to_vec())
            }
            OpKind::L2Normalize { .. } => {
                arity(1)?;
                if s[0].is_empty() {
                    return Err("l2_normalize input must have rank >= 1".into());
                }
                Ok(s[0].to_vec())
            }
            OpKind::Sum { axis } | OpKind::Mean { axis } => {
                arity(1)?;
                match axis {
                    None => Ok(vec![]),
                    Some(a) if *a < s[0].len() => {
                        let mut out = s[0].to_vec();
                        out.remove(*a);
                        Ok(out)
                    }
                    Some(a) => Err(format!("axis {a} out of range for {:?}", s[0])),
                }
            }
            OpKind::Concat { axis } => {
                if s.is_empty() {
                    return Err("concat needs at least one input".into());
                }
                let first = s[0];
                if *axis >= first.len() {
                    return Err(format!("axis {axis} out of range for {first:?}"));
                }
                let mut total = 0;
                for sh in s {
                    if sh.len() != first.len()
                        || sh
                            .iter()
                            .zip(first.iter())
                            .enumerate()
                            .any(|(i, (a, b))| i != *axis && a != b)
                    {
                        return Err(format!("concat along {axis}: {first:?} vs {sh:?}"));
                    }
                    total += sh[*axis];
                }
                let mut out = first.to_vec();
                out[*axis] = total;
                Ok(out)
            }
            OpKind::Slice { axis, start, end } => {
                arity(1)?;
                if *axis >= s[0].len() || start > end || *end > s[0][*axis] {
                    return Err(format!(
                        "slice {start}..{end} on axis {axis} invalid for {:?}",
                        s[0]
                    ));
                }
                let mut out = s[0].to_vec();
                out[*axis] = end - start;
                Ok(out)
            }
            OpKind::Expand { count } => {
                arity(1)?;
                let mut out = vec![*count];
                out.extend_from_slice(s[0]);
                Ok(out)
            }
            OpKind::Permute(perm) => {
                arity(1)?;
                let mut sorted = perm.clone();
                sorted.sort_unstable();
                if perm.len() != s[0].len() || sorted.iter().enumerate().any(|(i, &p)| i != p) {
                    return Err(format!(
                        "{perm:?} is not a permutation of {} axes",
                        s[0].len()
                    ));
                }
                Ok(perm.iter().map(|&p| s[0][p]).collect())
            }
            OpKind::Reshape(shape) => {
                arity(1)?;
                let a: usize = s[0].iter().product();
                let b: usize = shape.iter().product();
                if a != b {
                    return Err(format!("cannot reshape {:?} into {shape:?}", s[0]));
                }
                Ok(shape.clone())
            }
            OpKind::Embedding { ids, ids_shape } => {
                arity(1)?;
                if s[0].len() != 2 {
                    return Err(format!("table must be [vocab, dim], got {:?}", s[0]));
                }
                if ids.len() != ids_shape.iter().product::<usize>() {
                    return Err("ids do not fill ids_shape".into());
                }
                if let Some(bad) = ids.iter().find(|&&i| i >= s[0][0]) {
                    return Err(format!(
                        "id {bad} out of range for vocabulary of {}",
                        s[0][0]
                    ));
                }
                let mut out = ids_shape.clone();
                out.push(s[0][1]);
                Ok(out)
            }
            OpKind::Nll { targets } => {
                arity(1)?;
                if s[0].len() != 2 || s[0][0] != targets.len() {
                    return Err(format!("log-probs {:?} vs {} targets", s[0], targets.len()));
                }
                if let Some(bad) = targets.iter().find(|&&t| t >= s[0][1]) {
                    return Err(format!("target {bad} out of range for {} classes", s[0][1]));
                }
                Ok(vec![])
            }
            OpKind::Custom(c) => c.output_shape(s),
        }
    }
}

fn mat_dims(shape: &[usize], trans: bool) -> (usize, usize) {
    let r = shape[shape.len() - 2];
    let c = shape[shape.len() - 1];
    if trans {
        (c, r)
    } else {
        (r, c)
    }
}

/// State a forward pass leaves for the backward rule.
#[derive(Clone, Debug, Default)]
pub(crate) enum Saved<T> {
    #[default]
    None,
    /// Per-element dropout scale.
    Mask(Vec<T>),
    /// Normalized input and per-row reciprocal std.
    Norm { xhat: Vec<T>, rstd: Vec<T> },
    /// im2col buffer `[N, T, Cin*K]`.
    Cols(Vec<T>),
    /// Per-row divisor used by L2 normalization.
    Divisors(Vec<T>),
}

pub(crate) struct Ctx {
    pub train: bool,
    pub seed: u64,
    pub step: u64,
    pub node: u64,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn broadcast_len(b: &[usize]) -> usize {
    b.iter().product::<usize>().max(1)
}

pub(crate) fn forward<T: Real>(
    op: &OpKind<T>,
    x: &[&[T]],
    s: &[&[usize]],
    out_shape: &[usize],
    ctx: &Ctx,
) -> (Vec<T>, Saved<T>) {
    let none = Saved::None;
    match op {
        OpKind::MatMul { trans_a, trans_b } => {
            let (a, b) = (s[0], s[1]);
            let (m, k) = mat_dims(a, *trans_a);
            let n = *out_shape.last().unwrap();
            let batch: usize = a[..a.len() - 2].iter().product();
            let shared_b = b.len() == 2;
            let mut out = vec![T::zero(); batch * m * n];
            for bi in 0..batch {
                let aa = &x[0][bi * m * k..(bi + 1) * m * k];
                let bb = if shared_b {
                    x[1]
                } else {
                    &x[1][bi * k * n..(bi + 1) * k * n]
                };
                gemm(
                    m,
                    n,
                    k,
                    aa,
                    *trans_a,
                    bb,
                    *trans_b,
                    &mut out[bi * m * n..(bi + 1) * m * n],
                );
            }
            (out, none)
        }
        OpKind::Conv1d { stride, padding } => {
            let (nb, cin, len) = (s[0][0], s[0][1], s[0][2]);
            let (cout, k) = (s[1][0], s[1][2]);
            let t_out = out_shape[2];
            let ck = cin * k;
            let mut cols = vec![T::zero(); nb * t_out * ck];
            for n in 0..nb {
                for t in 0..t_out {
                    let row = &mut cols[(n * t_out + t) * ck..(n * t_out + t + 1) * ck];
                    for c in 0..cin {
                        let src = &x[0][(n * cin + c) * len..(n * cin + c + 1) * len];
                        for kk in 0..k {
                            let pos = (t * stride + kk) as isize - *padding as isize;
                            if pos >= 0 && (pos as usize) < len {
                                row[c * k + kk] = src[pos as usize];
                            }
                        }
                    }
                }
            }
            let mut out = vec![T::zero(); nb * cout * t_out];
            for n in 0..nb {
                let o = &mut out[n * cout * t_out..(n + 1) * cout * t_out];
                if x.len() == 3 {
                    for co in 0..cout {
                        o[co * t_out..(co + 1) * t_out].fill(x[2][co]);
                    }
                }
                gemm(
                    cout,
                    t_out,
                    ck,
                    x[1],
                    false,
                    &cols[n * t_out * ck..(n + 1) * t_out * ck],
                    true,
                    o,
                );
            }
            (out, Saved::Cols(cols))
        }
        OpKind::Add | OpKind::Mul => {
            let bl = broadcast_len(s[1]);
            let add = matches!(op, OpKind::Add);
            let out = x[0]
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    let b = x[1][i % bl];
                    if add {
                        a + b
                    } else {
                        a * b
                    }
                })
                .collect();
            (out, none)
        }
        OpKind::Scale(c) => {
            let c = T::of(*c);
            (x[0].iter().map(|&v| v * c).collect(), none)
        }
        OpKind::LayerNorm { eps } => {
            let d = *s[0].last().unwrap();
            let rows = x[0].len() / d.max(1);
            let mut out = vec![T::zero(); x[0].len()];
            let mut xhat = vec![T::zero(); x[0].len()];
            let mut rstd = vec![T::zero(); rows];
            let inv_d = T::one() / T::of(d as f64);
            for r in 0..rows {
                let row = &x[0][r * d..(r + 1) * d];
                let mean = row.iter().copied().sum::<T>() * inv_d;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                let rs = T::one() / (var + T::of(*eps)).sqrt();
                rstd[r] = rs;
                for j in 0..d {
                    let h = (row[j] - mean) * rs;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * x[1][j] + x[2][j];
                }
            }
            (out, Saved::Norm { xhat, rstd })
        }
        OpKind::Softmax { temperature, mask } => {
            let keys = *s[0].last().unwrap();
            let inv_t = T::one() / T::of(*temperature);
            let rows = x[0].len() / keys.max(1);
            let mut out = vec![T::zero(); x[0].len()];
            for r in 0..rows {
                let row = &x[0][r * keys..(r + 1) * keys];
                let keep = |j: usize| match mask {
                    Some(m) => m.keep[(r / m.rows_per_item) * keys + j],
                    None => true,
                };
                let mut mx = T::neg_infinity();
                for (j, &v) in row.iter().enumerate() {
                    if keep(j) && v * inv_t > mx {
                        mx = v * inv_t;
                    }
                }
                if mx == T::neg_infinity() {
                    // every key masked: the row stays all-zero
                    continue;
                }
                let o = &mut out[r * keys..(r + 1) * keys];
                let mut z = T::zero();
                for (j, &v) in row.iter().enumerate() {
                    if keep(j) {
                        let e = (v * inv_t - mx).exp();
                        o[j] = e;
                        z = z + e;
                    }
                }
                for v in o.iter_mut() {
                    *v = *v / z;
                }
            }
            (out, none)
        }
        OpKind::LogSoftmax { temperature } => {
            let c = *s[0].last().unwrap();
            let inv_t = T::one() / T::of(*temperature);
            let mut out = vec![T::zero(); x[0].len()];
            for (row, o) in x[0].chunks(c).zip(out.chunks_mut(c)) {
                let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v * inv_t));
                let lse = row.iter().map(|&v| (v * inv_t - mx).exp()).sum::<T>().ln() + mx;
                for (ov, &v) in o.iter_mut().zip(row) {
                    *ov = v * inv_t - lse;
                }
            }
            (out, none)
        }
        OpKind::Activation(Activation::Gelu) => {
            let (c, a) = (T::of(GELU_C), T::of(GELU_A));
            let half = T::of(0.5);
            (
                x[0].iter()
                    .map(|&v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()))
                    .collect(),
                none,
            )
        }
        OpKind::Activation(Activation::Relu) => {
            (x[0].iter().map(|&v| v.max(T::zero())).collect(), none)
        }
        OpKind::Dropout { p } => {
            if !ctx.train || *p == 0.0 {
                return (x[0].to_vec(), none);
            }
            let scale = T::of(1.0 / (1.0 - p));
            let mask: Vec<T> = (0..x[0].len())
                .map(|i| {
                    if counter_uniform(ctx.seed, ctx.node, ctx.step, i as u64) < *p {
                        T::zero()
                    } else {
                        scale
                    }
                })
                .collect();
            let out = x[0].iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            (out, Saved::Mask(mask))
        }
        OpKind::Sum { axis } | OpKind::Mean { axis } => {
            let mean = matches!(op, OpKind::Mean { .. });
            match axis {
                None => {
                    let total = x[0].iter().copied().sum::<T>();
                    let v = if mean {
                        total / T::of(x[0].len() as f64)
                    } else {
                        total
                    };
                    (vec![v], none)
                }
                Some(ax) => {
                    let (outer, n, inner) = split_axis(s[0], *ax);
                    let mut out = vec![T::zero(); outer * inner];
                    for o in 0..outer {
                        for i in 0..n {
                            let src = &x[0][(o * n + i) * inner..(o * n + i + 1) * inner];
                            for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                                *d = *d + v;
                            }
                        }
                    }
                    if mean {
                        let inv = T::one() / T::of(n as f64);
                        out.iter_mut().for_each(|v| *v = *v * inv);
                    }
                    (out, none)
                }
            }
        }
        OpKind::Concat { axis } => {
            let (outer, _, inner) = split_axis(out_shape, *axis);
            let mut out = Vec::with_capacity(out_shape.iter().product());
            for o in 0..outer {
                for (xi, si) in x.iter().zip(s) {
                    let chunk = si[*axis] * inner;
                    out.extend_from_slice(&xi[o * chunk..(o + 1) * chunk]);
                }
            }
            (out, none)
        }
        OpKind::Slice { axis, start, end } => {
            let (outer, n, inner) = split_axis(s[0], *axis);
            let mut out = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                out.extend_from_slice(&x[0][(o * n + start) * inner..(o * n + end) * inner]);
            }
            (out, none)
        }
        OpKind::Expand { count } => {
            let mut out = Vec::with_capacity(x[0].len() * count);
            for _ in 0..*count {
                out.extend_from_slice(x[0]);
            }
            (out, none)
        }
        OpKind::L2Normalize { eps } => {
            let d = *s[0].last().unwrap();
            let mut out = vec![T::zero(); x[0].len()];
            let mut divs = Vec::with_capacity(x[0].len() / d.max(1));
            for (row, o) in x[0].chunks(d).zip(out.chunks_mut(d)) {
                let n = dot(row, row).sqrt().max(T::of(*eps));
                divs.push(n);
                for (ov, &v) in o.iter_mut().zip(row) {
                    *ov = v / n;
                }
            }
            (out, Saved::Divisors(divs))
        }
        OpKind::Log { floor } => {
            let f = T::of(*floor);
            (x[0].iter().map(|&v| v.max(f).ln()).collect(), none)
        }
        OpKind::Exp => (x[0].iter().map(|&v| v.exp()).collect(), none),
        OpKind::Permute(perm) => (permute(x[0], s[0], perm), none),
        OpKind::Reshape(_) | OpKind::Detach => (x[0].to_vec(), none),
        OpKind::Embedding { ids, .. } => {
            let d = s[0][1];
            let mut out = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                out.extend_from_slice(&x[0][id * d..(id + 1) * d]);
            }
            (out, none)
        }
        OpKind::Nll { targets } => {
            let c = s[0][1];
            let total = targets
                .iter()
                .enumerate()
                .map(|(i, &t)| x[0][i * c + t])
                .sum::<T>();
            (vec![-total / T::of(targets.len() as f64)], none)
        }
        OpKind::Custom(c) => (c.forward(x, s), none),
    }
}

/// Vector-Jacobian products for each input flagged in `need`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    op: &OpKind<T>,
    x: &[&[T]],
    s: &[&[usize]],
    out: &[T],
    out_shape: &[usize],
    dy: &[T],
    saved: &Saved<T>,
    need: &[bool],
) -> Vec<Option<Vec<T>>> {
    let mut g: Vec<Option<Vec<T>>> = vec![None; x.len()];
    match op {
        OpKind::MatMul { trans_a, trans_b } => {
            let (a, b) = (s[0], s[1]);
            let (m, k) = mat_dims(a, *trans_a);
            let n = *out_shape.last().unwrap();
            let batch: usize = a[..a.len() - 2].iter().product();
            let shared_b = b.len() == 2;
            if need[0] {
                let mut da = vec![T::zero(); x[0].len()];
                for bi in 0..batch {
                    let dc = &dy[bi * m * n..(bi + 1) * m * n];
                    let bb = if shared_b {
                        x[1]
                    } else {
                        &x[1][bi * k * n..(bi + 1) * k * n]
                    };
                    let dst = &mut da[bi * m * k..(bi + 1) * m * k];
                    if *trans_a {
                        // A stored k×m: dA = op(B) · dCᵀ
                        gemm(k, m, n, bb, *trans_b, dc, true, dst);
                    } else {
                        gemm(m, k, n, dc, false, bb, !*trans_b, dst);
                    }
                }
                g[0] = Some(da);
            }
            if need[1] {
                let mut db = vec![T::zero(); x[1].len()];
                for bi in 0..batch {
                    let dc = &dy[bi * m * n..(bi + 1) * m * n];
                    let aa = &x[0][bi * m * k..(bi + 1) * m * k];
                    let dst = if shared_b {
                        &mut db[..]
                    } else {
                        &mut db[bi * k * n..(bi + 1) * k * n]
                    };
                    if *trans_b {
                        // B stored n×k: dB = dCᵀ · op(A)
                        gemm(n, k, m, dc, true, aa, *trans_a, dst);
                    } else {
                        gemm(k, n, m, aa, !*trans_a, dc, false, dst);
                    }
                }
                g[1] = Some(db);
            }
        }
        OpKind::Conv1d { stride, padding } => {
            let (nb, cin, len) = (s[0][0], s[0][1], s[0][2]);
            let (cout, k) = (s[1][0], s[1][2]);
            let t_out = out_shape[2];
            let ck = cin * k;
            let Saved::Cols(cols) = saved else {
                unreachable!("conv1d saves its columns")
            };
            if need[1] {
                let mut dw = vec![T::zero(); x[1].len()];
                for n in 0..nb {
                    let d = &dy[n * cout * t_out..(n + 1) * cout * t_out];
                    gemm(
                        cout,
                        ck,
                        t_out,
                        d,
                        false,
                        &cols[n * t_out * ck..(n + 1) * t_out * ck],
                        false,
                        &mut dw,
                    );
                }
                g[1] = Some(dw);
            }
            if x.len() == 3 && need[2] {
                let mut db = vec![T::zero(); cout];
                for n in 0..nb {
                    for (co, dbv) in db.iter_mut().enumerate() {
                        let base = (n * cout + co) * t_out;
                        *dbv = *dbv + dy[base..base + t_out].iter().copied().sum::<T>();
                    }
                }
                g[2] = Some(db);
            }
            if need[0] {
                let mut dx = vec![T::zero(); x[0].len()];
                let mut dcols = vec![T::zero(); t_out * ck];
                for n in 0..nb {
                    dcols.fill(T::zero());
                    let d = &dy[n * cout * t_out..(n + 1) * cout * t_out];
                    gemm(t_out, ck, cout, d, true, x[1], false, &mut dcols);
                    for t in 0..t_out {
                        for c in 0..cin {
                            let dst = &mut dx[(n * cin + c) * len..(n * cin + c + 1) * len];
                            for kk in 0..k {
                                let pos = (t * stride + kk) as isize - *padding as isize;
                                if pos >= 0 && (pos as usize) < len {
                                    dst[pos as usize] =
                                        dst[pos as usize] + dcols[t * ck + c * k + kk];
                                }
                            }
                        }
                    }
                }
                g[0] = Some(dx);
            }
        }
        OpKind::Add => {
            if need[0] {
                g[0] = Some(dy.to_vec());
            }
            if need[1] {
                let bl = broadcast_len(s[1]);
                let mut db = vec![T::zero(); bl];
                for (i, &d) in dy.iter().enumerate() {
                    db[i % bl] = db[i % bl] + d;
                }
                g[1] = Some(db);
            }
        }
        OpKind::Mul => {
            let bl = broadcast_len(s[1]);
            if need[0] {
                g[0] = Some(
                    dy.iter()
                        .enumerate()
                        .map(|(i, &d)| d * x[1][i % bl])
                        .collect(),
                );
            }
            if need[1] {
                let mut db = vec![T::zero(); bl];
                for (i, &d) in dy.iter().enumerate() {
                    db[i % bl] = db[i % bl] + d * x[0][i];
                }
                g[1] = Some(db);
            }
        }
        OpKind::Scale(c) => {
            let c = T::of(*c);
            g[0] = Some(dy.iter().map(|&d| d * c).collect());
        }
        OpKind::LayerNorm { .. } => {
            let d = *s[0].last().unwrap();
            let Saved::Norm { xhat, rstd } = saved else {
                unreachable!("layer_norm saves x-hat")
            };
            if need[1] {
                let mut dg = vec![T::zero(); d];
                for (i, &dv) in dy.iter().enumerate() {
                    dg[i % d] = dg[i % d] + dv * xhat[i];
                }
                g[1] = Some(dg);
            }
            if need[2] {
                let mut db = vec![T::zero(); d];
                for (i, &dv) in dy.iter().enumerate() {
                    db[i % d] = db[i % d] + dv;
                }
                g[2] = Some(db);
            }
            if need[0] {
                let inv_d = T::one() / T::of(d as f64);
                let mut dx = vec![T::zero(); dy.len()];
                let mut dxh = vec![T::zero(); d];
                for (r, &rs) in rstd.iter().enumerate() {
                    let base = r * d;
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..d {
                        dxh[j] = dy[base + j] * x[1][j];
                        m1 = m1 + dxh[j];
                        m2 = m2 + dxh[j] * xhat[base + j];
                    }
                    m1 = m1 * inv_d;
                    m2 = m2 * inv_d;
                    for j in 0..d {
                        dx[base + j] = rs * (dxh[j] - m1 - xhat[base + j] * m2);
                    }
                }
                g[0] = Some(dx);
            }
        }
        OpKind::Softmax { temperature, .. } => {
            let keys = *s[0].last().unwrap();
            let inv_t = T::one() / T::of(*temperature);
            let mut dx = vec![T::zero(); dy.len()];
            for ((y, d), o) in out
                .chunks(keys)
                .zip(dy.chunks(keys))
                .zip(dx.chunks_mut(keys))
            {
                let inner = dot(y, d);
                for j in 0..keys {
                    o[j] = y[j] * (d[j] - inner) * inv_t;
                }
            }
            g[0] = Some(dx);
        }
        OpKind::LogSoftmax { temperature } => {
            let c = *s[0].last().unwrap();
            let inv_t = T::one() / T::of(*temperature);
            let mut dx = vec![T::zero(); dy.len()];
            for ((y, d), o) in out.chunks(c).zip(dy.chunks(c)).zip(dx.chunks_mut(c)) {
                let total = d.iter().copied().sum::<T>();
                for j in 0..c {
                    o[j] = (d[j] - y[j].exp() * total) * inv_t;
                }
            }
            g[0] = Some(dx);
        }
        OpKind::Activation(Activation::Gelu) => {
            let (c, a) = (T::of(GELU_C), T::of(GELU_A));
            let half = T::of(0.5);
            let three_a = T::of(3.0 * GELU_A);
            g[0] = Some(
                x[0].iter()
                    .zip(dy)
                    .map(|(&v, &d)| {
                        let th = (c * (v + a * v * v * v)).tanh();
                        let dth = (T::one() - th * th) * c * (T::one() + three_a * v * v);
                        d * (half * (T::one() + th) + half * v * dth)
                    })
                    .collect(),
            );
        }
        OpKind::Activation(Activation::Relu) => {
            g[0] = Some(
                x[0].iter()
                    .zip(dy)
                    .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                    .collect(),
            );
        }
        OpKind::Dropout { .. } => {
            g[0] = Some(match saved {
                Saved::Mask(m) => dy.iter().zip(m).map(|(&d, &mv)| d * mv).collect(),
                _ => dy.to_vec(),
            });
        }
        OpKind::Sum { axis } | OpKind::Mean { axis } => {
            let mean = matches!(op, OpKind::Mean { .. });
            match axis {
                None => {
                    let v = if mean {
                        dy[0] / T::of(x[0].len() as f64)
                    } else {
                        dy[0]
                    };
                    g[0] = Some(vec![v; x[0].len()]);
                }
                Some(ax) => {
                    let (outer, n, inner) = split_axis(s[0], *ax);
                    let scale = if mean {
                        T::one() / T::of(n as f64)
                    } else {
                        T::one()
                    };
                    let mut dx = vec![T::zero(); x[0].len()];
                    for o in 0..outer {
                        let src = &dy[o * inner..(o + 1) * inner];
                        for i in 0..n {
                            for (dv, &sv) in dx[(o * n + i) * inner..(o * n + i + 1) * inner]
                                .iter_mut()
                                .zip(src)
                            {
                                *dv = sv * scale;
                            }
                        }
                    }
                    g[0] = Some(dx);
                }
            }
        }
        OpKind::Concat { axis } => {
            let (outer, _, inner) = split_axis(out_shape, *axis);
            let total = out_shape[*axis] * inner;
            let mut offset = 0;
            for (i, si) in s.iter().enumerate() {
                let chunk = si[*axis] * inner;
                if need[i] {
                    let mut dx = Vec::with_capacity(x[i].len());
                    for o in 0..outer {
                        dx.extend_from_slice(&dy[o * total + offset..o * total + offset + chunk]);
                    }
                    g[i] = Some(dx);
                }
                offset += chunk;
            }
        }
        OpKind::Slice { axis, start, end } => {
            let (outer, n, inner) = split_axis(s[0], *axis);
            let w = (end - start) * inner;
            let mut dx = vec![T::zero(); x[0].len()];
            for o in 0..outer {
                dx[(o * n + start) * inner..(o * n + end) * inner]
                    .copy_from_slice(&dy[o * w..(o + 1) * w]);
            }
            g[0] = Some(dx);
        }
        OpKind::Expand { count } => {
            let n = x[0].len();
            let mut dx = vec![T::zero(); n];
            for c in 0..*count {
                for (dv, &d) in dx.iter_mut().zip(&dy[c * n..(c + 1) * n]) {
                    *dv = *dv + d;
                }
            }
            g[0] = Some(dx);
        }
        OpKind::L2Normalize { eps } => {
            let d = *s[0].last().unwrap();
            let Saved::Divisors(divs) = saved else {
                unreachable!("l2_normalize saves norms")
            };
            let mut dx = vec![T::zero(); dy.len()];
            for (r, &n) in divs.iter().enumerate() {
                let y = &out[r * d..(r + 1) * d];
                let dd = &dy[r * d..(r + 1) * d];
                let o = &mut dx[r * d..(r + 1) * d];
                if n > T::of(*eps) {
                    let inner = dot(y, dd);
                    for j in 0..d {
                        o[j] = (dd[j] - y[j] * inner) / n;
                    }
                } else {
                    for j in 0..d {
                        o[j] = dd[j] / n;
                    }
                }
            }
            g[0] = Some(dx);
        }
        OpKind::Log { floor } => {
            let f = T::of(*floor);
            g[0] = Some(
                x[0].iter()
                    .zip(dy)
                    .map(|(&v, &d)| if v > f { d / v } else { T::zero() })
                    .collect(),
            );
        }
        OpKind::Exp => {
            g[0] = Some(out.iter().zip(dy).map(|(&y, &d)| y * d).collect());
        }
        OpKind::Permute(perm) => {
            g[0] = Some(permute(dy, out_shape, &inverse_perm(perm)));
        }
        OpKind::Reshape(_) => {
            g[0] = Some(dy.to_vec());
        }
        OpKind::Detach => {}
        OpKind::Embedding { ids, .. } => {
            let d = s[0][1];
            let mut dt = vec![T::zero(); x[0].len()];
            for (i, &id) in ids.iter().enumerate() {
                for j in 0..d {
                    dt[id * d + j] = dt[id * d + j] + dy[i * d + j];
                }
            }
            g[0] = Some(dt);
        }
        OpKind::Nll { targets } => {
            let c = s[0][1];
            let mut dx = vec![T::zero(); x[0].len()];
            let v = -dy[0] / T::of(targets.len() as f64);
            for (i, &t) in targets.iter().enumerate() {
                dx[i * c + t] = dx[i * c + t] + v;
            }
            g[0] = Some(dx);
        }
        OpKind::Custom(c) => {
            for (i, gi) in c.backward(x, s, out, dy).into_iter().enumerate() {
                if need[i] {
                    g[i] = Some(gi);
                }
            }
        }
    }
    g
}
