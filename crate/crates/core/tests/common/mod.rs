#![allow(dead_code)]

use dceeg_core::{ClipModel, ClipSpec, ConformerConfig, PromptMode, Samples, TextEncoderConfig};
use dceeg_signal::{
    generate, preprocess, ClassSignature, EpochDataset, PreprocessConfig, SyntheticSpec,
};

pub fn tiny_eeg(electrodes: usize, window: usize) -> ConformerConfig {
    ConformerConfig {
        num_layers: 2,
        num_heads: 2,
        model_dim: 16,
        ffn_expansion: 2,
        dropout: 0.1,
        conv_kernel: 31,
        conv_stride: 16,
        prompt_count_per_layer: 2,
        latent_dim: 16,
        electrodes,
        window_samples: window,
        ..Default::default()
    }
}

pub fn tiny_text(mode: PromptMode) -> TextEncoderConfig {
    TextEncoderConfig {
        num_layers: 1,
        num_heads: 2,
        hidden_dim: 16,
        ffn_expansion: 2,
        attention_dropout: 0.1,
        hidden_dropout: 0.1,
        prompt_count_per_layer: 2,
        prompt_mode: mode,
        max_seq_len: 16,
        latent_dim: 16,
    }
}

pub fn prompts() -> Vec<String> {
    vec![
        "eeg showing ongoing background rhythm".into(),
        "eeg showing rhythmic slow wave discharge pattern".into(),
    ]
}

pub fn channels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("ch{i}")).collect()
}

pub fn tiny_model(eeg: ConformerConfig, text: TextEncoderConfig) -> ClipModel {
    let e = eeg.electrodes;
    ClipModel::new(ClipSpec::new(
        eeg,
        text,
        vec!["bckg".into(), "SZ".into()],
        prompts(),
        channels(e),
    ))
    .unwrap()
}

/// Two-class synthetic epochs: 4 channels at 128 Hz, 1 s windows.
pub fn synthetic(recordings: usize, seed: u64) -> EpochDataset {
    let spec = SyntheticSpec {
        num_recordings: recordings,
        channels: 4,
        sample_rate_hz: 128.0,
        duration_s: 40.0,
        seizures_per_recording: 2,
        classes: vec![ClassSignature {
            label: "SZ".into(),
            band_lo_hz: 3.0,
            band_hi_hz: 6.0,
            amplitude_uv: 40.0,
            burst_s: 6.0,
        }],
        seed,
        ..Default::default()
    };
    let recs = generate(&spec).unwrap();
    let cfg = PreprocessConfig {
        target_hz: 128.0,
        high_hz: 40.0,
        ..Default::default()
    };
    preprocess(&recs, &cfg, seed).unwrap().0
}

pub fn samples(ds: &EpochDataset) -> Samples<f64> {
    Samples::from_dataset(ds).unwrap()
}

/// Deterministic pseudo-random inputs in [-1, 1].
pub fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}
