use serde::{Deserialize, Serialize};

use crate::recording::{EegEpoch, EegRecording};

/// Where z-score statistics come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZScoreScope {
    #[default]
    PerEpoch,
    PerRecording,
}

/// Below this population std a channel counts as constant.
const CONSTANT_STD: f64 = 1e-12;

/// `(x − μ) / σ` with population σ; constant input becomes zeros.
pub fn zscore_slice(x: &mut [f64]) {
    let n = x.len() as f64;
    if x.is_empty() {
        return;
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < CONSTANT_STD * (1.0 + mean.abs()) {
        x.fill(0.0);
    } else {
        x.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
}

pub fn zscore(epoch: &EegEpoch) -> EegEpoch {
    let mut out = epoch.clone();
    for c in 0..out.num_channels {
        zscore_slice(out.channel_mut(c));
    }
    out
}

pub fn zscore_recording(rec: &EegRecording) -> EegRecording {
    let mut out = rec.clone();
    out.samples.iter_mut().for_each(|r| zscore_slice(r));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epoch(rows: &[&[f64]]) -> EegEpoch {
        EegEpoch {
            data: rows.concat(),
            num_channels: rows.len(),
            window_samples: rows[0].len(),
            label: "bckg".into(),
            source_id: "r".into(),
            window_start_s: 0.0,
        }
    }

    #[test]
    fn one_two_three() {
        let z = zscore(&epoch(&[&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]]));
        let s = (1.5f64).sqrt();
        let want = [-s, 0.0, s];
        for (a, b) in z.channel(0).iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((z.channel(0)[2] - 1.2247).abs() < 1e-4);
        assert_eq!(z.channel(1), &[0.0, 0.0, 0.0]);
    }
}
