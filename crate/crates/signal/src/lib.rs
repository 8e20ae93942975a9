//! EEG preprocessing: ingest, band-pass filtering, resampling, windowing,
//! balancing, normalization and synthetic recordings.

mod artifact;
mod balance;
mod butterworth;
mod dataset;
pub mod edf;
mod error;
mod normalize;
mod pipeline;
mod raw;
mod recording;
mod resample;
mod segment;
mod synth;

pub use artifact::{ArtifactPolicy, Rejection};
pub use balance::balance;
pub use butterworth::{bandpass_filter, design_bandpass, Biquad, Sos, DEFAULT_ORDER};
pub use dataset::{EpochDataset, EPOCHS_MAGIC};
pub use error::{Result, SignalError};
pub use normalize::{zscore, zscore_recording, zscore_slice, ZScoreScope};
pub use pipeline::{preprocess, PreprocessConfig, PreprocessReport};
pub use raw::{
    load_dir, load_recording, read_annotations, read_raw, save_recording, write_annotations,
    write_raw, RAW_MAGIC,
};
pub use recording::{Annotation, EegEpoch, EegRecording, BACKGROUND, MONTAGE_10_20};
pub use resample::{resample, resample_channel, resampled_len};
pub use segment::{
    plan_windows, sample_intervals, segment, window_label, SampleInterval, Segmentation,
    SegmentationPolicy, WindowPlan,
};
pub use synth::{
    band_power, generate, generate_recording, ClassSignature, SyntheticRecording, SyntheticSpec,
};
