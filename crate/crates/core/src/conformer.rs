//! Conformer EEG encoder: per-electrode temporal convolution, a spatial
//! mix across electrodes, then pre-norm attention/FFN blocks with prompt
//! tokens prepended at every block.

use std::ops::Range;

use dceeg_autodiff::init::Initializer;
use dceeg_autodiff::{Graph, NodeId, ParamStore, Real};

use crate::config::{ConformerConfig, Pooling};
use crate::error::{CoreError, Result};
use crate::nn;

pub const EEG_ENCODER: &str = "eeg_encoder";

#[derive(Clone, Debug, PartialEq)]
pub struct EegEncoder {
    pub cfg: ConformerConfig,
    /// Parameter name prefix, e.g. `clip/eeg_encoder`.
    pub prefix: String,
}

/// Nodes of one encoder pass.
#[derive(Clone, Debug)]
pub struct EegTrace {
    /// `f_eeg [B, output_dim]`, before normalization.
    pub features: NodeId,
    /// Pooled `[B, d]` state before the head.
    pub pooled: NodeId,
    /// Temporal conv output `[B·E, d, T]`, before the activation.
    pub conv: NodeId,
    /// Token stream entering the first block `[B, T, d]`.
    pub tokens: NodeId,
    /// Token stream after each block, prompts removed.
    pub blocks: Vec<NodeId>,
    spans: Vec<(String, Range<usize>)>,
}

impl EegTrace {
    /// Attach the failing stage to a non-finite error raised by
    /// [`Graph::forward`]; other errors pass through.
    pub fn locate(&self, err: dceeg_autodiff::Error) -> CoreError {
        if let dceeg_autodiff::Error::NonFinite { node, label } = &err {
            if let Some((name, _)) = self.spans.iter().find(|(_, r)| r.contains(node)) {
                return CoreError::NonFiniteActivation {
                    layer: name.clone(),
                    detail: format!("node #{node} '{label}'"),
                };
            }
        }
        err.into()
    }
}

impl EegEncoder {
    pub fn new(cfg: ConformerConfig, prefix: impl Into<String>) -> Result<Self> {
        cfg.validate()?;
        Ok(EegEncoder {
            cfg,
            prefix: prefix.into(),
        })
    }

    fn name(&self, rest: &str) -> String {
        format!("{}/{rest}", self.prefix)
    }

    pub fn prompt_name(&self, layer: usize) -> String {
        self.name(&format!("block{layer}/prompts"))
    }

    /// Register every tensor of the encoder in `store`.
    pub fn init_params<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Initializer) {
        let c = &self.cfg;
        let d = c.model_dim;
        store.insert(
            self.name("conv/w"),
            init.weight(&[d, c.input_channels, c.conv_kernel]),
        );
        store.insert(self.name("conv/b"), dceeg_autodiff::init::zeros(&[d]));
        nn::init_linear(store, init, &self.name("spatial"), c.electrodes * d, d);
        if c.pooling == Pooling::ClassToken {
            store.insert(self.name("cls"), init.weight(&[1, d]));
        }
        for l in 0..c.num_layers {
            let b = self.name(&format!("block{l}"));
            nn::init_layer_norm(store, &format!("{b}/ln1"), d);
            nn::init_attention(store, init, &format!("{b}/attn"), d);
            nn::init_layer_norm(store, &format!("{b}/ln2"), d);
            nn::init_ffn(store, init, &format!("{b}/ffn"), d, c.ffn_dim());
            if c.prompt_count_per_layer > 0 {
                store.insert(
                    self.prompt_name(l),
                    init.weight(&[c.prompt_count_per_layer, d]),
                );
            }
        }
        nn::init_layer_norm(store, &self.name("final_ln"), d);
        nn::init_linear(store, init, &self.name("head"), d, c.latent_dim);
        if let Some(p) = c.projection_dim {
            nn::init_linear(store, init, &self.name("projection"), c.latent_dim, p);
        }
    }

    /// Declare the encoder on `x[B, C, E, L]`.
    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: NodeId,
    ) -> Result<EegTrace> {
        let c = &self.cfg;
        let shape = g.shape(x).to_vec();
        let expect = [c.input_channels, c.electrodes, c.window_samples];
        if shape.len() != 4 || shape[1..] != expect {
            return Err(CoreError::Mismatch(format!(
                "eeg batch has shape {shape:?}, encoder expects [B, {}, {}, {}]",
                expect[0], expect[1], expect[2]
            )));
        }
        let (b, d, e, t) = (shape[0], c.model_dim, c.electrodes, c.num_tokens());
        let mut spans = Vec::new();

        let start = g.len();
        let per_electrode = if c.input_channels == 1 {
            g.reshape(x, &[b * e, 1, c.window_samples])?
        } else {
            let p = g.permute(x, &[0, 2, 1, 3])?;
            g.reshape(p, &[b * e, c.input_channels, c.window_samples])?
        };
        let w = g.param(store, &self.name("conv/w"))?;
        let bias = g.param(store, &self.name("conv/b"))?;
        let conv = g.conv1d(
            per_electrode,
            w,
            Some(bias),
            c.conv_stride,
            c.conv_padding(),
        )?;
        let h = g.gelu(conv)?;
        let h = g.reshape(h, &[b, e, d, t])?;
        let h = g.permute(h, &[0, 3, 1, 2])?;
        let h = g.reshape(h, &[b, t, e * d])?;
        let h = nn::linear(g, store, &self.name("spatial"), h)?;
        let h = g.gelu(h)?;
        let tokens = g.dropout(h, c.dropout)?;
        let mut x = tokens;
        if c.pooling == Pooling::ClassToken {
            let cls = g.param(store, &self.name("cls"))?;
            x = nn::insert_tokens(g, x, cls, 0)?;
        }
        spans.push(("front-end".to_string(), start..g.len()));

        let mut blocks = Vec::with_capacity(c.num_layers);
        for l in 0..c.num_layers {
            let start = g.len();
            x = self.block(g, store, l, x)?;
            blocks.push(x);
            spans.push((format!("block {l}"), start..g.len()));
        }

        let start = g.len();
        let h = nn::layer_norm(g, store, &self.name("final_ln"), x)?;
        let pooled = match c.pooling {
            Pooling::Mean => g.mean_axis(h, 1)?,
            Pooling::ClassToken => {
                let first = g.slice(h, 1, 0, 1)?;
                g.reshape(first, &[b, d])?
            }
        };
        let mut features = nn::linear(g, store, &self.name("head"), pooled)?;
        if c.projection_dim.is_some() {
            features = nn::linear(g, store, &self.name("projection"), features)?;
        }
        spans.push(("head".to_string(), start..g.len()));
        Ok(EegTrace {
            features,
            pooled,
            conv,
            tokens,
            blocks,
            spans,
        })
    }

    /// One pre-norm block; prompts are prepended on entry and removed on exit.
    fn block<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        l: usize,
        x: NodeId,
    ) -> Result<NodeId> {
        let c = &self.cfg;
        let p = c.prompt_count_per_layer;
        let name = self.name(&format!("block{l}"));
        let s = if p > 0 {
            let prompts = g.param(store, &self.prompt_name(l))?;
            nn::insert_tokens(g, x, prompts, 0)?
        } else {
            x
        };
        let h = nn::layer_norm(g, store, &format!("{name}/ln1"), s)?;
        let (h, _) =
            nn::self_attention(g, store, &format!("{name}/attn"), h, c.num_heads, None, 0.0)?;
        let h = g.dropout(h, c.dropout)?;
        let s = g.add(s, h)?;
        let h = nn::layer_norm(g, store, &format!("{name}/ln2"), s)?;
        let h = nn::ffn(g, store, &format!("{name}/ffn"), h)?;
        let h = g.dropout(h, c.dropout)?;
        let s = g.add(s, h)?;
        if p > 0 {
            nn::remove_tokens(g, s, p, 0)
        } else {
            Ok(s)
        }
    }
}

/// Trainable-parameter count by component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub front_end: usize,
    pub blocks: Vec<usize>,
    pub final_norm: usize,
    pub head: usize,
    pub projection: usize,
}

impl ParamCount {
    pub fn block_total(&self) -> usize {
        self.blocks.iter().sum()
    }

    pub fn total(&self) -> usize {
        self.front_end + self.block_total() + self.final_norm + self.head + self.projection
    }
}

/// Parameters of one pre-norm block including its prompt vectors.
pub fn block_params(c: &ConformerConfig) -> usize {
    let d = c.model_dim;
    2 * 2 * d
        + nn::attention_params(d)
        + nn::ffn_params(d, c.ffn_dim())
        + c.prompt_count_per_layer * d
}

pub fn count_params(c: &ConformerConfig) -> ParamCount {
    let d = c.model_dim;
    let cls = if c.pooling == Pooling::ClassToken {
        d
    } else {
        0
    };
    ParamCount {
        front_end: d * c.input_channels * c.conv_kernel
            + d
            + nn::linear_params(c.electrodes * d, d)
            + cls,
        blocks: vec![block_params(c); c.num_layers],
        final_norm: 2 * d,
        head: nn::linear_params(d, c.latent_dim),
        projection: c
            .projection_dim
            .map_or(0, |p| nn::linear_params(c.latent_dim, p)),
    }
}

/// FLOPs of a dense `rows × din → dout` matrix product.
pub fn linear_flops(rows: usize, din: usize, dout: usize) -> u64 {
    2 * rows as u64 * din as u64 * dout as u64
}

/// FLOPs of one stage, split by kind.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerFlops {
    pub name: String,
    /// Convolutions and dense projections (QKV/output, spatial, head).
    pub dense: u64,
    /// Attention scores plus context aggregation.
    pub attention: u64,
    pub ffn: u64,
    pub cumulative: u64,
}

impl LayerFlops {
    pub fn total(&self) -> u64 {
        self.dense + self.attention + self.ffn
    }
}

/// Per-stage FLOPs (2 per multiply-accumulate) with a running total:
/// front end, each block, then the head (including any projection).
pub fn count_flops(c: &ConformerConfig, batch: usize) -> Vec<LayerFlops> {
    let (d, e, t) = (c.model_dim, c.electrodes, c.num_tokens());
    let cls = usize::from(c.pooling == Pooling::ClassToken);
    let n = t + cls + c.prompt_count_per_layer;
    let mut out: Vec<LayerFlops> = Vec::new();
    let mut push = |name: String, dense: u64, attention: u64, ffn: u64| {
        let prev = out.last().map_or(0, |l| l.cumulative);
        out.push(LayerFlops {
            name,
            dense,
            attention,
            ffn,
            cumulative: prev + dense + attention + ffn,
        });
    };
    let conv = linear_flops(batch * e * t, c.input_channels * c.conv_kernel, d);
    let spatial = linear_flops(batch * t, e * d, d);
    push("front-end".into(), conv + spatial, 0, 0);
    for l in 0..c.num_layers {
        let qkvo = 4 * linear_flops(batch * n, d, d);
        // Per head: n×n scores over dh, then n×n weights over dh values.
        let attn = 2 * linear_flops(batch * c.num_heads * n, c.head_dim(), n);
        let ffn = linear_flops(batch * n, d, c.ffn_dim()) + linear_flops(batch * n, c.ffn_dim(), d);
        push(format!("block {l}"), qkvo, attn, ffn);
    }
    let head = linear_flops(batch, d, c.latent_dim)
        + c.projection_dim
            .map_or(0, |p| linear_flops(batch, c.latent_dim, p));
    push("head".into(), head, 0, 0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use dceeg_autodiff::{Mode, Tensor};

    fn toy() -> ConformerConfig {
        ConformerConfig {
            num_layers: 2,
            num_heads: 2,
            model_dim: 8,
            dropout: 0.0,
            conv_kernel: 5,
            conv_stride: 4,
            prompt_count_per_layer: 2,
            latent_dim: 6,
            electrodes: 3,
            window_samples: 16,
            ..Default::default()
        }
    }

    fn store_for(enc: &EegEncoder, seed: u64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        enc.init_params(&mut s, &mut Initializer::new(seed));
        s
    }

    #[test]
    fn formula_matches_instantiated_tensors() {
        for cfg in [
            toy(),
            ConformerConfig {
                pooling: Pooling::ClassToken,
                ..toy()
            },
            ConformerConfig {
                prompt_count_per_layer: 0,
                ..toy()
            },
            toy().into_student(),
            ConformerConfig::default(),
        ] {
            let enc = EegEncoder::new(cfg.clone(), "e").unwrap();
            assert_eq!(
                store_for(&enc, 0).num_trainable(),
                count_params(&cfg).total(),
                "{cfg:?}"
            );
        }
    }

    #[test]
    fn doubling_depth_doubles_block_subtotal() {
        let a = count_params(&toy());
        let b = count_params(&ConformerConfig {
            num_layers: 4,
            ..toy()
        });
        assert_eq!(b.block_total(), 2 * a.block_total());
        assert_eq!(b.front_end, a.front_end);
    }

    #[test]
    fn paper_presets_compress_params_and_flops() {
        let t = ConformerConfig::paper_teacher();
        let s = ConformerConfig::paper_student();
        let (pt, ps) = (count_params(&t).total(), count_params(&s).total());
        let ratio = ps as f64 / pt as f64;
        assert!(
            (0.50..=0.65).contains(&ratio),
            "teacher {pt} student {ps} ratio {ratio}"
        );
        let (ft, fs) = (count_flops(&t, 32), count_flops(&s, 32));
        for (a, b) in fs.iter().zip(&ft) {
            assert!(a.cumulative < b.cumulative, "{} vs {}", a.name, b.name);
        }
    }

    #[test]
    fn single_linear_flops() {
        assert_eq!(linear_flops(1, 7, 3), 42);
    }

    #[test]
    fn cumulative_series_is_running_sum() {
        let f = count_flops(&toy(), 3);
        assert_eq!(f.len(), 2 + toy().num_layers);
        let mut acc = 0;
        for l in &f {
            acc += l.total();
            assert_eq!(l.cumulative, acc);
        }
    }

    #[test]
    fn output_shape_independent_of_prompts() {
        for p in [0, 1, 3] {
            let cfg = ConformerConfig {
                prompt_count_per_layer: p,
                ..toy()
            };
            let enc = EegEncoder::new(cfg, "e").unwrap();
            let store = store_for(&enc, 1);
            let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
            let x = g.input("x", &[2, 1, 3, 16]);
            let tr = enc.encode(&mut g, &store, x).unwrap();
            assert_eq!(g.shape(tr.features), &[2, 6]);
            for &bl in &tr.blocks {
                assert_eq!(g.shape(bl), &[2, 4, 8]);
            }
        }
    }

    #[test]
    fn wrong_batch_shape_is_rejected() {
        let enc = EegEncoder::new(toy(), "e").unwrap();
        let store = store_for(&enc, 1);
        let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
        let x = g.input("x", &[2, 1, 4, 16]);
        assert!(matches!(
            enc.encode(&mut g, &store, x),
            Err(CoreError::Mismatch(_))
        ));
    }

    #[test]
    fn non_finite_activation_names_the_layer() {
        let enc = EegEncoder::new(toy(), "e").unwrap();
        let mut store = store_for(&enc, 1);
        store.get_mut("e/block1/ffn/fc1/b").unwrap().data_mut()[0] = f64::INFINITY;
        let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
        let x = g.input_value("x", &Tensor::full(&[1, 1, 3, 16], 0.5), false);
        let tr = enc.encode(&mut g, &store, x).unwrap();
        match g.run(&store).map_err(|e| tr.locate(e)) {
            Err(CoreError::NonFiniteActivation { layer, .. }) => assert_eq!(layer, "block 1"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
