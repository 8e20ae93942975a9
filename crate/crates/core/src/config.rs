use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over the non-prompt tokens.
    #[default]
    Mean,
    /// A learnable token prepended once before the first block.
    ClassToken,
}

/// Conformer EEG encoder shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ffn_expansion: usize,
    pub dropout: f64,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub prompt_count_per_layer: usize,
    pub latent_dim: usize,
    /// Extra linear map after the head; the student's projection layer.
    pub projection_dim: Option<usize>,
    pub input_channels: usize,
    pub electrodes: usize,
    pub window_samples: usize,
    pub pooling: Pooling,
}

impl Default for ConformerConfig {
    fn default() -> Self {
        ConformerConfig {
            num_layers: 8,
            num_heads: 10,
            model_dim: 40,
            ffn_expansion: 4,
            dropout: 0.3,
            conv_kernel: 31,
            conv_stride: 4,
            prompt_count_per_layer: 4,
            latent_dim: 40,
            projection_dim: None,
            input_channels: 1,
            electrodes: 19,
            window_samples: 256,
            pooling: Pooling::Mean,
        }
    }
}

impl ConformerConfig {
    /// Width-520, 8-layer teacher on 19 electrodes × 256 samples. Used for
    /// parameter and FLOP accounting only.
    pub fn paper_teacher() -> Self {
        ConformerConfig {
            model_dim: 520,
            latent_dim: 520,
            ..Default::default()
        }
    }

    /// 4-layer counterpart of [`Self::paper_teacher`] with a projection back
    /// to the teacher's latent width and a coarser token stride.
    pub fn paper_student() -> Self {
        Self::paper_teacher().into_student()
    }

    /// Student derived from a teacher: half the layers, double the conv
    /// stride, plus a projection to the teacher's latent width.
    pub fn into_student(self) -> Self {
        ConformerConfig {
            num_layers: (self.num_layers / 2).max(1),
            conv_stride: self.conv_stride * 2,
            projection_dim: Some(self.latent_dim),
            ..self
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.model_dim * self.ffn_expansion
    }

    pub fn conv_padding(&self) -> usize {
        self.conv_kernel / 2
    }

    /// Tokens after the front end (before prompts or a class token).
    pub fn num_tokens(&self) -> usize {
        (self.window_samples + 2 * self.conv_padding() - self.conv_kernel) / self.conv_stride + 1
    }

    /// Width of the encoder output (after the projection, if any).
    pub fn output_dim(&self) -> usize {
        self.projection_dim.unwrap_or(self.latent_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Config(format!("eeg encoder: {m}")));
        if self.num_layers == 0
            || self.num_heads == 0
            || self.model_dim == 0
            || self.ffn_expansion == 0
        {
            return fail("layers, heads, width and ffn expansion must be positive".into());
        }
        if self.model_dim % self.num_heads != 0 {
            return fail(format!(
                "model_dim {} not divisible by {} heads",
                self.model_dim, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0,1)", self.dropout));
        }
        if self.conv_kernel == 0 || self.conv_stride == 0 {
            return fail("conv kernel and stride must be positive".into());
        }
        if self.window_samples == 0
            || self.window_samples + 2 * self.conv_padding() < self.conv_kernel
        {
            return fail(format!(
                "window of {} samples shorter than conv kernel {}",
                self.window_samples, self.conv_kernel
            ));
        }
        if self.latent_dim == 0 || self.projection_dim == Some(0) {
            return fail("latent width must be positive".into());
        }
        if self.input_channels == 0 || self.electrodes == 0 {
            return fail("input channels and electrodes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    #[default]
    Learnable,
    Handcrafted,
    None,
}

impl PromptMode {
    pub fn name(self) -> &'static str {
        match self {
            PromptMode::Learnable => "learnable",
            PromptMode::Handcrafted => "handcrafted",
            PromptMode::None => "none",
        }
    }
}

/// BERT-style text encoder shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextEncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub ffn_expansion: usize,
    pub attention_dropout: f64,
    pub hidden_dropout: f64,
    pub prompt_count_per_layer: usize,
    pub prompt_mode: PromptMode,
    pub max_seq_len: usize,
    pub latent_dim: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            num_layers: 4,
            num_heads: 4,
            hidden_dim: 64,
            ffn_expansion: 4,
            attention_dropout: 0.2,
            hidden_dropout: 0.2,
            prompt_count_per_layer: 4,
            prompt_mode: PromptMode::Learnable,
            max_seq_len: 32,
            latent_dim: 40,
        }
    }
}

impl TextEncoderConfig {
    /// 12 layers, 12 heads, width 768.
    pub fn paper() -> Self {
        TextEncoderConfig {
            num_layers: 12,
            num_heads: 12,
            hidden_dim: 768,
            latent_dim: 520,
            ..Default::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.hidden_dim * self.ffn_expansion
    }

    /// Learnable prompt vectors per layer (zero unless the mode is learnable).
    pub fn learnable_prompts(&self) -> usize {
        match self.prompt_mode {
            PromptMode::Learnable => self.prompt_count_per_layer,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Config(format!("text encoder: {m}")));
        if self.num_layers == 0
            || self.num_heads == 0
            || self.hidden_dim == 0
            || self.ffn_expansion == 0
        {
            return fail("layers, heads, width and ffn expansion must be positive".into());
        }
        if self.hidden_dim % self.num_heads != 0 {
            return fail(format!(
                "hidden_dim {} not divisible by {} heads",
                self.hidden_dim, self.num_heads
            ));
        }
        for (n, p) in [
            ("attention_dropout", self.attention_dropout),
            ("hidden_dropout", self.hidden_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{n} {p} outside [0,1)"));
            }
        }
        if self.max_seq_len < 2 || self.latent_dim == 0 {
            return fail("max_seq_len must be at least 2 and latent_dim positive".into());
        }
        Ok(())
    }
}
