//! Prompt ablation grid.

use serde::{Deserialize, Serialize};

use crate::config::{ConformerConfig, PromptMode, TextEncoderConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationVariant {
    EegLp,
    TextWp,
    TextLp,
    TextHp,
    BaseWp,
    BaseLp,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 6] = [
        AblationVariant::EegLp,
        AblationVariant::TextWp,
        AblationVariant::TextLp,
        AblationVariant::TextHp,
        AblationVariant::BaseWp,
        AblationVariant::BaseLp,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::EegLp => "EEG-LP",
            AblationVariant::TextWp => "Text-WP",
            AblationVariant::TextLp => "Text-LP",
            AblationVariant::TextHp => "Text-HP",
            AblationVariant::BaseWp => "Base-WP",
            AblationVariant::BaseLp => "Base-LP",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(s))
    }

    /// Whether the EEG encoder keeps its per-layer prompts.
    pub fn eeg_prompts(self) -> bool {
        matches!(
            self,
            AblationVariant::EegLp | AblationVariant::TextWp | AblationVariant::BaseLp
        )
    }

    pub fn text_mode(self) -> PromptMode {
        match self {
            AblationVariant::EegLp | AblationVariant::BaseWp => PromptMode::None,
            AblationVariant::TextWp | AblationVariant::TextHp => PromptMode::Handcrafted,
            AblationVariant::TextLp | AblationVariant::BaseLp => PromptMode::Learnable,
        }
    }

    /// Copies of the configs with this variant's prompt settings. A disabled
    /// EEG prompt sets its count to zero; an enabled one with a zero count
    /// falls back to 4.
    pub fn apply(
        self,
        eeg: &ConformerConfig,
        text: &TextEncoderConfig,
    ) -> (ConformerConfig, TextEncoderConfig) {
        let mut e = eeg.clone();
        e.prompt_count_per_layer = match (self.eeg_prompts(), eeg.prompt_count_per_layer) {
            (false, _) => 0,
            (true, 0) => 4,
            (true, n) => n,
        };
        let mut t = text.clone();
        t.prompt_mode = self.text_mode();
        if t.prompt_mode == PromptMode::Learnable && t.prompt_count_per_layer == 0 {
            t.prompt_count_per_layer = 4;
        }
        (e, t)
    }
}

/// Trainable prompt parameters: `L_e·p_e·d + L_t·p_t·h`.
pub fn prompt_param_count(eeg: &ConformerConfig, text: &TextEncoderConfig) -> usize {
    eeg.num_layers * eeg.prompt_count_per_layer * eeg.model_dim
        + text.num_layers * text.learnable_prompts() * text.hidden_dim
}
