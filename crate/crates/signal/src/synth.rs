//! Deterministic synthetic recordings: band-limited background noise with
//! class-specific oscillation bursts over annotated intervals.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::butterworth::design_bandpass;
use crate::error::{Result, SignalError};
use crate::recording::{Annotation, EegRecording, BACKGROUND, MONTAGE_10_20};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSignature {
    pub label: String,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    /// RMS of the burst before any boost needed to reach `power_ratio`.
    pub amplitude_uv: f64,
    pub burst_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_recordings: usize,
    pub channels: usize,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub seizures_per_recording: usize,
    pub classes: Vec<ClassSignature>,
    /// Background RMS in microvolts.
    pub noise_uv: f64,
    pub background_band_hz: [f64; 2],
    /// Minimum ratio of in-band power during a burst to the background's
    /// in-band power over the same interval.
    pub power_ratio: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_recordings: 10,
            channels: 19,
            sample_rate_hz: 500.0,
            duration_s: 60.0,
            seizures_per_recording: 2,
            classes: vec![ClassSignature {
                label: "SZ".into(),
                band_lo_hz: 3.0,
                band_hi_hz: 6.0,
                amplitude_uv: 40.0,
                burst_s: 8.0,
            }],
            noise_uv: 20.0,
            background_band_hz: [0.5, 40.0],
            power_ratio: 4.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SignalError::InvalidPolicy(m));
        if self.num_recordings == 0 || self.channels == 0 {
            return bad("need at least one recording and one channel".into());
        }
        if !(self.sample_rate_hz > 0.0 && self.duration_s > 0.0 && self.noise_uv > 0.0) {
            return bad("rate, duration and noise must be positive".into());
        }
        if !(self.power_ratio >= 1.0) {
            return bad(format!(
                "power_ratio {} must be at least 1",
                self.power_ratio
            ));
        }
        if self.classes.is_empty() {
            return bad("need at least one seizure class".into());
        }
        let nyq = self.sample_rate_hz / 2.0;
        let [blo, bhi] = self.background_band_hz;
        if !(0.0 < blo && blo < bhi && bhi < nyq) {
            return bad(format!(
                "background band {blo}-{bhi} Hz invalid at {} Hz",
                self.sample_rate_hz
            ));
        }
        let slot = self.duration_s / self.seizures_per_recording.max(1) as f64;
        for (i, c) in self.classes.iter().enumerate() {
            if c.label == BACKGROUND || c.label.is_empty() || c.label.contains([',', ' ']) {
                return bad(format!(
                    "class label '{}' is reserved or malformed",
                    c.label
                ));
            }
            if !(0.0 < c.band_lo_hz && c.band_lo_hz < c.band_hi_hz && c.band_hi_hz < nyq) {
                return bad(format!(
                    "class {} band {}-{} Hz invalid",
                    c.label, c.band_lo_hz, c.band_hi_hz
                ));
            }
            if !(c.burst_s > 0.0 && c.burst_s + 2.0 <= slot) {
                return bad(format!(
                    "class {} burst {} s does not fit a {slot} s slot with margins",
                    c.label, c.burst_s
                ));
            }
            if !(c.amplitude_uv >= 0.0) {
                return bad(format!("class {} amplitude must be non-negative", c.label));
            }
            for d in &self.classes[..i] {
                if d.label == c.label {
                    return bad(format!("duplicate class label {}", c.label));
                }
                if d.band_lo_hz == c.band_lo_hz && d.band_hi_hz == c.band_hi_hz {
                    return bad(format!("classes {} and {} share a band", d.label, c.label));
                }
            }
        }
        Ok(())
    }

    pub fn channel_names(&self) -> Vec<String> {
        (0..self.channels)
            .map(|i| {
                MONTAGE_10_20
                    .get(i)
                    .map_or_else(|| format!("Ch{}", i + 1), |s| s.to_string())
            })
            .collect()
    }

    pub fn class_labels(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.label.clone()).collect()
    }
}

/// A generated recording plus its background alone, for measurements.
pub struct SyntheticRecording {
    pub recording: EegRecording,
    pub background: Vec<Vec<f64>>,
}

/// Sum of `|X_k|²` over DFT bins whose frequency lies in `[lo, hi]`.
pub fn band_power(x: &[f64], sample_rate_hz: f64, lo: f64, hi: f64) -> f64 {
    band_spectrum(x, sample_rate_hz, lo, hi)
        .iter()
        .map(|c| c.norm_sqr())
        .sum()
}

fn band_spectrum(x: &[f64], fs: f64, lo: f64, hi: f64) -> Vec<Complex64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    (1..=n / 2)
        .filter(|&k| {
            let f = k as f64 * fs / n as f64;
            lo <= f && f <= hi
        })
        .map(|k| buf[k])
        .collect()
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn generate_recording(spec: &SyntheticSpec, index: usize) -> Result<SyntheticRecording> {
    spec.validate()?;
    let fs = spec.sample_rate_hz;
    let n = (spec.duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, index as u64));
    let [blo, bhi] = spec.background_band_hz;
    let sos = design_bandpass(4, blo, bhi, fs)?;

    let mut background = Vec::with_capacity(spec.channels);
    for _ in 0..spec.channels {
        let white: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut y = sos.filtfilt(&white)?;
        let rms = (y.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        y.iter_mut().for_each(|v| *v *= spec.noise_uv / rms);
        background.push(y);
    }

    // Per-class spatial gain, shared by all recordings.
    let mut gain_rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, u64::MAX));
    let gains: Vec<Vec<f64>> = spec
        .classes
        .iter()
        .map(|_| {
            (0..spec.channels)
                .map(|_| gain_rng.random_range(0.5..1.0))
                .collect()
        })
        .collect();

    let mut samples = background.clone();
    let mut annotations = Vec::new();
    let k = spec.seizures_per_recording;
    let slot = spec.duration_s / k.max(1) as f64;
    for j in 0..k {
        let ci = (index * k + j) % spec.classes.len();
        let class = &spec.classes[ci];
        let free = slot - class.burst_s - 2.0;
        let onset = ((j as f64 * slot + 1.0 + rng.random_range(0.0..=free)) * fs).round() / fs;
        let start = (onset * fs).round() as usize;
        let len = (class.burst_s * fs).round() as usize;
        let end = (start + len).min(n);
        let freqs: Vec<(f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(class.band_lo_hz..class.band_hi_hz),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        for c in 0..spec.channels {
            let burst: Vec<f64> = (start..end)
                .map(|i| {
                    let t = i as f64 / fs;
                    freqs
                        .iter()
                        .map(|(f, p)| (2.0 * PI * f * t + p).sin())
                        .sum::<f64>()
                })
                .collect();
            let bg = &background[c][start..end];
            let xb = band_spectrum(bg, fs, class.band_lo_hz, class.band_hi_hz);
            let xs = band_spectrum(&burst, fs, class.band_lo_hz, class.band_hi_hz);
            let a: f64 = xb.iter().map(|z| z.norm_sqr()).sum();
            let b: f64 = xs.iter().map(|z| z.norm_sqr()).sum();
            let cross: f64 = xb.iter().zip(&xs).map(|(u, v)| (u * v.conj()).re).sum();
            // Smallest s with A + 2sC + s²B ≥ ratio·A, nudged up.
            let need =
                (-cross + (cross * cross + b * (spec.power_ratio - 1.0) * a).sqrt()) / b * 1.01;
            let rms = (burst.iter().map(|v| v * v).sum::<f64>() / burst.len() as f64).sqrt();
            let nominal = class.amplitude_uv * gains[ci][c] / rms;
            let s = need.max(nominal);
            for (dst, v) in samples[c][start..end].iter_mut().zip(&burst) {
                *dst += s * v;
            }
        }
        annotations.push(Annotation {
            onset_s: onset,
            offset_s: end as f64 / fs,
            label: class.label.clone(),
        });
    }
    let recording = EegRecording::new(
        format!("synth-{index:03}"),
        fs,
        spec.channel_names(),
        samples,
        annotations,
    )?;
    Ok(SyntheticRecording {
        recording,
        background,
    })
}

pub fn generate(spec: &SyntheticSpec) -> Result<Vec<EegRecording>> {
    (0..spec.num_recordings)
        .map(|i| generate_recording(spec, i).map(|r| r.recording))
        .collect()
}
