//! BERT-style text encoder with per-layer prompt vectors inserted after
//! `[CLS]`.

use dceeg_autodiff::init::Initializer;
use dceeg_autodiff::{Graph, NodeId, ParamStore, Real, Tensor};

use crate::config::{PromptMode, TextEncoderConfig};
use crate::error::{CoreError, Result};
use crate::nn;
use crate::vocab::{tokenize, words, Tokenized, Vocabulary};

pub const TEXT_ENCODER: &str = "text_encoder";

/// Fixed prefix used by the handcrafted prompt mode.
pub const HANDCRAFTED_PREFIX: &str = "a recording of brain electrical activity showing";

#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoder {
    pub cfg: TextEncoderConfig,
    pub vocab_size: usize,
    pub prefix: String,
    handcrafted_ids: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct TextTrace {
    /// `f_txt [K, latent_dim]`, before normalization.
    pub features: NodeId,
    /// Final `[CLS]` state `[K, hidden]`.
    pub cls: NodeId,
    /// Attention probabilities per layer, `[K·H, N, N]`.
    pub attention: Vec<NodeId>,
    /// Key mask per layer, `[K · N]`.
    pub key_keep: Vec<Vec<bool>>,
}

impl TextEncoder {
    /// The vocabulary must contain the handcrafted prefix words when that
    /// mode is selected.
    pub fn new(
        cfg: TextEncoderConfig,
        vocab: &Vocabulary,
        prefix: impl Into<String>,
    ) -> Result<Self> {
        cfg.validate()?;
        let handcrafted_ids: Vec<usize> = words(HANDCRAFTED_PREFIX)
            .iter()
            .map(|w| vocab.id(w))
            .collect();
        if cfg.prompt_mode == PromptMode::Handcrafted
            && handcrafted_ids.contains(&crate::vocab::UNK)
        {
            return Err(CoreError::Config(
                "vocabulary lacks the handcrafted prefix words".into(),
            ));
        }
        Ok(TextEncoder {
            cfg,
            vocab_size: vocab.len(),
            prefix: prefix.into(),
            handcrafted_ids,
        })
    }

    fn name(&self, rest: &str) -> String {
        format!("{}/{rest}", self.prefix)
    }

    pub fn prompt_name(&self, layer: usize) -> String {
        self.name(&format!("layer{layer}/prompts"))
    }

    pub fn handcrafted_name(&self) -> String {
        self.name("handcrafted_prefix")
    }

    pub fn init_params<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Initializer) {
        let c = &self.cfg;
        let h = c.hidden_dim;
        let table: Tensor<T> = init.weight(&[self.vocab_size, h]);
        if c.prompt_mode == PromptMode::Handcrafted {
            let rows: Vec<T> = self
                .handcrafted_ids
                .iter()
                .flat_map(|&i| table.row(i).to_vec())
                .collect();
            let frozen = Tensor::new(vec![self.handcrafted_ids.len(), h], rows)
                .expect("rows match")
                .frozen();
            store.insert(self.handcrafted_name(), frozen);
        }
        store.insert(self.name("token_embedding"), table);
        store.insert(
            self.name("position_embedding"),
            init.weight(&[c.max_seq_len, h]),
        );
        nn::init_layer_norm(store, &self.name("embedding_ln"), h);
        for l in 0..c.num_layers {
            let b = self.name(&format!("layer{l}"));
            nn::init_attention(store, init, &format!("{b}/attn"), h);
            nn::init_layer_norm(store, &format!("{b}/ln1"), h);
            nn::init_ffn(store, init, &format!("{b}/ffn"), h, c.ffn_dim());
            nn::init_layer_norm(store, &format!("{b}/ln2"), h);
            if c.learnable_prompts() > 0 {
                store.insert(
                    self.prompt_name(l),
                    init.weight(&[c.prompt_count_per_layer, h]),
                );
            }
        }
        nn::init_linear(store, init, &self.name("head"), h, c.latent_dim);
    }

    pub fn tokenize_all<S: AsRef<str>>(&self, texts: &[S], vocab: &Vocabulary) -> Vec<Tokenized> {
        texts
            .iter()
            .map(|t| tokenize(t.as_ref(), vocab, self.cfg.max_seq_len))
            .collect()
    }

    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        batch: &[Tokenized],
    ) -> Result<TextTrace> {
        let c = &self.cfg;
        let (k, s, h) = (batch.len(), c.max_seq_len, c.hidden_dim);
        let mut ids = Vec::with_capacity(k * s);
        let mut keep = Vec::with_capacity(k * s);
        for t in batch {
            if t.ids.len() != s {
                return Err(CoreError::Mismatch(format!(
                    "token sequence of length {} but max_seq_len is {s}",
                    t.ids.len()
                )));
            }
            if let Some(&id) = t.ids.iter().find(|&&i| i >= self.vocab_size) {
                return Err(CoreError::TokenOutOfRange {
                    id,
                    size: self.vocab_size,
                });
            }
            ids.extend_from_slice(&t.ids);
            keep.extend((0..s).map(|j| j < t.length.max(1)));
        }
        let table = g.param(store, &self.name("token_embedding"))?;
        let x = g.embedding(table, &ids, &[k, s])?;
        let pos = g.param(store, &self.name("position_embedding"))?;
        let x = g.add(x, pos)?;
        let x = nn::layer_norm(g, store, &self.name("embedding_ln"), x)?;
        let mut x = g.dropout(x, c.hidden_dropout)?;
        let mut n = s;
        if c.prompt_mode == PromptMode::Handcrafted {
            let fixed = g.param(store, &self.handcrafted_name())?;
            let p = self.handcrafted_ids.len();
            x = nn::insert_tokens(g, x, fixed, 1)?;
            keep = with_inserted(&keep, n, p);
            n += p;
        }

        let p = c.learnable_prompts();
        let mut attention = Vec::with_capacity(c.num_layers);
        let mut masks = Vec::with_capacity(c.num_layers);
        for l in 0..c.num_layers {
            let (s_in, layer_keep) = if p > 0 {
                let prompts = g.param(store, &self.prompt_name(l))?;
                (
                    nn::insert_tokens(g, x, prompts, 1)?,
                    with_inserted(&keep, n, p),
                )
            } else {
                (x, keep.clone())
            };
            let name = self.name(&format!("layer{l}"));
            let (a, probs) = nn::self_attention(
                g,
                store,
                &format!("{name}/attn"),
                s_in,
                c.num_heads,
                Some(&layer_keep),
                c.attention_dropout,
            )?;
            let a = g.dropout(a, c.hidden_dropout)?;
            let y = g.add(s_in, a)?;
            let y = nn::layer_norm(g, store, &format!("{name}/ln1"), y)?;
            let f = nn::ffn(g, store, &format!("{name}/ffn"), y)?;
            let f = g.dropout(f, c.hidden_dropout)?;
            let y = g.add(y, f)?;
            let y = nn::layer_norm(g, store, &format!("{name}/ln2"), y)?;
            x = if p > 0 {
                nn::remove_tokens(g, y, p, 1)?
            } else {
                y
            };
            attention.push(probs);
            masks.push(layer_keep);
        }
        let cls = g.slice(x, 1, 0, 1)?;
        let cls = g.reshape(cls, &[k, h])?;
        let features = nn::linear(g, store, &self.name("head"), cls)?;
        Ok(TextTrace {
            features,
            cls,
            attention,
            key_keep: masks,
        })
    }
}

/// Key mask after inserting `p` always-visible tokens after position 0.
fn with_inserted(keep: &[bool], n: usize, p: usize) -> Vec<bool> {
    keep.chunks(n)
        .flat_map(|row| {
            let mut r = Vec::with_capacity(n + p);
            r.push(row[0]);
            r.extend(std::iter::repeat_n(true, p));
            r.extend_from_slice(&row[1..]);
            r
        })
        .collect()
}

/// Trainable parameters of the text encoder.
pub fn count_text_params(c: &TextEncoderConfig, vocab_size: usize) -> usize {
    let h = c.hidden_dim;
    let layer = nn::attention_params(h)
        + nn::ffn_params(h, c.ffn_dim())
        + 2 * 2 * h
        + c.learnable_prompts() * h;
    vocab_size * h
        + c.max_seq_len * h
        + 2 * h
        + c.num_layers * layer
        + nn::linear_params(h, c.latent_dim)
}
