use serde::{Deserialize, Serialize};

use crate::error::{Result, SignalError};

/// Label given to every window that touches no annotated seizure.
pub const BACKGROUND: &str = "bckg";

/// Standard 19-electrode 10-20 montage.
pub const MONTAGE_10_20: [&str; 19] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz",
    "P4", "T6", "O1", "O2",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub onset_s: f64,
    pub offset_s: f64,
    pub label: String,
}

/// Multichannel signal in microvolts, one row per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct EegRecording {
    pub id: String,
    pub sample_rate_hz: f64,
    pub channels: Vec<String>,
    pub samples: Vec<Vec<f64>>,
    pub annotations: Vec<Annotation>,
}

impl EegRecording {
    pub fn new(
        id: impl Into<String>,
        sample_rate_hz: f64,
        channels: Vec<String>,
        samples: Vec<Vec<f64>>,
        annotations: Vec<Annotation>,
    ) -> Result<Self> {
        let rec = EegRecording {
            id: id.into(),
            sample_rate_hz,
            channels,
            samples,
            annotations,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SignalError::InvalidRecording(format!("{}: {m}", self.id)));
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return bad(format!("sample rate {}", self.sample_rate_hz));
        }
        if self.channels.is_empty() {
            return bad("no channels".into());
        }
        if self.channels.len() != self.samples.len() {
            return bad(format!(
                "{} channel names for {} rows",
                self.channels.len(),
                self.samples.len()
            ));
        }
        let n = self.samples[0].len();
        if self.samples.iter().any(|r| r.len() != n) {
            return bad("ragged channel rows".into());
        }
        let dur = self.duration_s();
        for a in &self.annotations {
            if !(0.0 <= a.onset_s && a.onset_s < a.offset_s && a.offset_s <= dur + 1e-9) {
                return bad(format!(
                    "annotation [{}, {}) outside [0, {dur}]",
                    a.onset_s, a.offset_s
                ));
            }
            if a.label == BACKGROUND {
                return bad(format!("annotation uses the reserved label '{BACKGROUND}'"));
            }
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.num_samples() as f64 / self.sample_rate_hz
    }

    pub fn with_samples(&self, sample_rate_hz: f64, samples: Vec<Vec<f64>>) -> Self {
        EegRecording {
            id: self.id.clone(),
            sample_rate_hz,
            channels: self.channels.clone(),
            samples,
            annotations: self.annotations.clone(),
        }
    }
}

/// Fixed-length window, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EegEpoch {
    pub data: Vec<f64>,
    pub num_channels: usize,
    pub window_samples: usize,
    pub label: String,
    pub source_id: String,
    pub window_start_s: f64,
}

impl EegEpoch {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.window_samples..(c + 1) * self.window_samples]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.window_samples..(c + 1) * self.window_samples]
    }

    pub fn is_seizure(&self) -> bool {
        self.label != BACKGROUND
    }
}
