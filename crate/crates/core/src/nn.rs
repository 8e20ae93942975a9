//! Layers shared by both encoders. Parameters are looked up by name as
//! `<prefix>/<layer>/<tensor>`.

use dceeg_autodiff::init::{ones, zeros, Initializer};
use dceeg_autodiff::{Graph, KeyMask, NodeId, ParamStore, Real};

use crate::error::Result;

pub const LN_EPS: f64 = 1e-5;

pub fn init_linear<T: Real>(
    store: &mut ParamStore<T>,
    init: &mut Initializer,
    name: &str,
    din: usize,
    dout: usize,
) {
    store.insert(format!("{name}/w"), init.weight(&[din, dout]));
    store.insert(format!("{name}/b"), zeros(&[dout]));
}

pub fn init_layer_norm<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) {
    store.insert(format!("{name}/g"), ones(&[d]));
    store.insert(format!("{name}/b"), zeros(&[d]));
}

pub fn init_attention<T: Real>(
    store: &mut ParamStore<T>,
    init: &mut Initializer,
    name: &str,
    d: usize,
) {
    for p in ["q", "k", "v", "o"] {
        init_linear(store, init, &format!("{name}/{p}"), d, d);
    }
}

pub fn init_ffn<T: Real>(
    store: &mut ParamStore<T>,
    init: &mut Initializer,
    name: &str,
    d: usize,
    fd: usize,
) {
    init_linear(store, init, &format!("{name}/fc1"), d, fd);
    init_linear(store, init, &format!("{name}/fc2"), fd, d);
}

pub const fn linear_params(din: usize, dout: usize) -> usize {
    din * dout + dout
}

pub const fn attention_params(d: usize) -> usize {
    4 * linear_params(d, d)
}

pub const fn ffn_params(d: usize, fd: usize) -> usize {
    linear_params(d, fd) + linear_params(fd, d)
}

pub fn linear<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    name: &str,
    x: NodeId,
) -> Result<NodeId> {
    let w = g.param(store, &format!("{name}/w"))?;
    let b = g.param(store, &format!("{name}/b"))?;
    Ok(g.linear(x, w, Some(b))?)
}

pub fn layer_norm<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    name: &str,
    x: NodeId,
) -> Result<NodeId> {
    let gain = g.param(store, &format!("{name}/g"))?;
    let bias = g.param(store, &format!("{name}/b"))?;
    Ok(g.layer_norm(x, gain, bias, LN_EPS)?)
}

pub fn ffn<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    name: &str,
    x: NodeId,
) -> Result<NodeId> {
    let h = linear(g, store, &format!("{name}/fc1"), x)?;
    let h = g.gelu(h)?;
    linear(g, store, &format!("{name}/fc2"), h)
}

/// Multi-head self-attention over `x[B, N, d]`. `key_keep[b * N + j]`
/// masks key `j` of item `b` when false. Returns the output and the
/// attention probabilities `[B·H, N, N]` (before dropout).
pub fn self_attention<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    name: &str,
    x: NodeId,
    heads: usize,
    key_keep: Option<&[bool]>,
    prob_dropout: f64,
) -> Result<(NodeId, NodeId)> {
    let (b, n, d) = match *g.shape(x) {
        [b, n, d] => (b, n, d),
        ref s => {
            return Err(dceeg_autodiff::Error::shape(
                "self_attention",
                format!("expected [B, N, d], got {s:?}"),
            )
            .into())
        }
    };
    let dh = d / heads;
    let split = |g: &mut Graph<T>, p: &str| -> Result<NodeId> {
        let y = linear(g, store, &format!("{name}/{p}"), x)?;
        let y = g.reshape(y, &[b, n, heads, dh])?;
        let y = g.permute(y, &[0, 2, 1, 3])?;
        Ok(g.reshape(y, &[b * heads, n, dh])?)
    };
    let q = split(g, "q")?;
    let k = split(g, "k")?;
    let v = split(g, "v")?;
    let scores = g.matmul_nt(q, k)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let probs = match key_keep {
        Some(keep) => {
            // One mask row block per (item, head) pair.
            let mut rows = Vec::with_capacity(b * heads * n);
            for item in 0..b {
                for _ in 0..heads {
                    rows.extend_from_slice(&keep[item * n..(item + 1) * n]);
                }
            }
            g.softmax_masked(
                scores,
                1.0,
                KeyMask {
                    keep: rows,
                    rows_per_item: n,
                },
            )?
        }
        None => g.softmax(scores, 1.0)?,
    };
    let dropped = g.dropout(probs, prob_dropout)?;
    let ctx = g.matmul(dropped, v)?;
    let ctx = g.reshape(ctx, &[b, heads, n, dh])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b, n, d])?;
    Ok((linear(g, store, &format!("{name}/o"), ctx)?, probs))
}

/// Prepend `count` rows of a `[count, d]` parameter to every item of
/// `x[B, N, d]`, after the first `offset` tokens.
pub fn insert_tokens<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    tokens: NodeId,
    offset: usize,
) -> Result<NodeId> {
    let b = g.shape(x)[0];
    let n = g.shape(x)[1];
    let t = g.expand(tokens, b)?;
    if offset == 0 {
        return Ok(g.concat(&[t, x], 1)?);
    }
    let head = g.slice(x, 1, 0, offset)?;
    let tail = g.slice(x, 1, offset, n)?;
    Ok(g.concat(&[head, t, tail], 1)?)
}

/// Inverse of [`insert_tokens`].
pub fn remove_tokens<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    count: usize,
    offset: usize,
) -> Result<NodeId> {
    let n = g.shape(x)[1];
    if offset == 0 {
        return Ok(g.slice(x, 1, count, n)?);
    }
    let head = g.slice(x, 1, 0, offset)?;
    let tail = g.slice(x, 1, offset + count, n)?;
    Ok(g.concat(&[head, tail], 1)?)
}
