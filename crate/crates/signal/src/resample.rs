//! Band-limited resampling by direct windowed-sinc interpolation.

use std::f64::consts::PI;

use crate::error::{Result, SignalError};
use crate::recording::EegRecording;

/// Zero crossings of the interpolation kernel on each side.
const HALF_ZEROS: f64 = 16.0;
/// Kernel cutoff as a fraction of the lower Nyquist rate.
const ROLLOFF: f64 = 0.95;

pub fn resampled_len(n: usize, source_hz: f64, target_hz: f64) -> usize {
    (n as f64 * target_hz / source_hz).round() as usize
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Resample one channel. Output sample `j` sits at `j / target_hz` seconds.
pub fn resample_channel(x: &[f64], source_hz: f64, target_hz: f64) -> Result<Vec<f64>> {
    if !(target_hz > 0.0) || !(source_hz > 0.0) {
        return Err(SignalError::InvalidPolicy(format!(
            "rates must be positive: {source_hz} -> {target_hz}"
        )));
    }
    if x.is_empty() {
        return Err(SignalError::InvalidRecording(
            "cannot resample an empty signal".into(),
        ));
    }
    if source_hz == target_hz {
        return Ok(x.to_vec());
    }
    let out_len = resampled_len(x.len(), source_hz, target_hz);
    // Cutoff in cycles per second, and its reach in source samples.
    let cutoff = ROLLOFF * 0.5 * source_hz.min(target_hz);
    let half_width_s = HALF_ZEROS / (2.0 * cutoff);
    let reach = (half_width_s * source_hz).ceil() as isize;
    let n = x.len() as isize;
    let mut y = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let t = j as f64 / target_hz;
        let centre = (t * source_hz).round() as isize;
        let (lo, hi) = ((centre - reach).max(0), (centre + reach).min(n - 1));
        let (mut acc, mut wsum) = (0.0, 0.0);
        for i in lo..=hi {
            let dt = t - i as f64 / source_hz;
            if dt.abs() > half_width_s {
                continue;
            }
            let window = 0.5 * (1.0 + (PI * dt / half_width_s).cos());
            let w = sinc(2.0 * cutoff * dt) * window;
            acc += w * x[i as usize];
            wsum += w;
        }
        y.push(if wsum.abs() > 1e-12 {
            acc / wsum
        } else {
            x[centre.clamp(0, n - 1) as usize]
        });
    }
    Ok(y)
}

/// Resample every channel; annotations stay in seconds.
pub fn resample(rec: &EegRecording, target_hz: f64) -> Result<EegRecording> {
    let rows = rec
        .samples
        .iter()
        .map(|r| resample_channel(r, rec.sample_rate_hz, target_hz))
        .collect::<Result<Vec<_>>>()?;
    Ok(rec.with_samples(target_hz, rows))
}
