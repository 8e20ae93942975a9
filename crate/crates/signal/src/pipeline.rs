//! clip → band-pass → resample → segment → reject → balance → z-score.

use serde::{Deserialize, Serialize};

use crate::artifact::{ArtifactPolicy, Rejection};
use crate::balance::balance;
use crate::butterworth::bandpass_filter;
use crate::dataset::EpochDataset;
use crate::error::{Result, SignalError};
use crate::normalize::{zscore, zscore_recording, ZScoreScope};
use crate::recording::EegRecording;
use crate::resample::resample;
use crate::segment::{segment, SegmentationPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub target_hz: f64,
    pub segmentation: SegmentationPolicy,
    pub artifacts: ArtifactPolicy,
    pub zscore: ZScoreScope,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            low_hz: 0.1,
            high_hz: 70.0,
            target_hz: 256.0,
            segmentation: SegmentationPolicy::default(),
            artifacts: ArtifactPolicy::default(),
            zscore: ZScoreScope::PerEpoch,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreprocessReport {
    pub recordings: usize,
    pub windows: usize,
    pub rejected_clipped: usize,
    pub rejected_flatline: usize,
    /// Recordings shorter than one window.
    pub too_short: Vec<String>,
}

pub fn preprocess(
    recs: &[EegRecording],
    cfg: &PreprocessConfig,
    seed: u64,
) -> Result<(EpochDataset, PreprocessReport)> {
    cfg.segmentation.validate()?;
    let first = recs
        .first()
        .ok_or_else(|| SignalError::InvalidRecording("no recordings".into()))?;
    let mut report = PreprocessReport {
        recordings: recs.len(),
        ..Default::default()
    };
    let mut epochs = Vec::new();
    for rec in recs {
        if rec.channels != first.channels {
            return Err(SignalError::InvalidRecording(format!(
                "{} has a different channel list than {}",
                rec.id, first.id
            )));
        }
        let clipped = cfg.artifacts.clip(rec);
        let filtered = bandpass_filter(&clipped, cfg.low_hz, cfg.high_hz)?;
        let mut r = resample(&filtered, cfg.target_hz)?;
        if cfg.zscore == ZScoreScope::PerRecording {
            r = zscore_recording(&r);
        }
        let seg = segment(&r, &cfg.segmentation)?;
        if seg.recording_too_short {
            report.too_short.push(rec.id.clone());
        }
        report.windows += seg.epochs.len();
        for e in seg.epochs {
            match cfg.artifacts.check(&e) {
                Some(Rejection::Clipped) => report.rejected_clipped += 1,
                Some(Rejection::Flatline) => report.rejected_flatline += 1,
                None => epochs.push(e),
            }
        }
    }
    let mut kept = balance(epochs, cfg.segmentation.balance_ratio, seed)?;
    if cfg.zscore == ZScoreScope::PerEpoch {
        kept = kept.iter().map(zscore).collect();
    }
    let w = cfg.segmentation.window_samples(cfg.target_hz);
    Ok((
        EpochDataset::new(first.channels.clone(), cfg.target_hz, w, kept)?,
        report,
    ))
}
