use serde::{Deserialize, Serialize};

use crate::recording::{EegEpoch, EegRecording};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArtifactPolicy {
    /// Samples are clipped to ±this many microvolts.
    pub clip_uv: f64,
    /// Reject an epoch when more than this fraction of its samples sit at
    /// the clip rail.
    pub max_clipped_fraction: f64,
    /// Reject an epoch when every channel's peak-to-peak is below this.
    pub flatline_uv: f64,
}

impl Default for ArtifactPolicy {
    fn default() -> Self {
        ArtifactPolicy {
            clip_uv: 500.0,
            max_clipped_fraction: 0.05,
            flatline_uv: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rejection {
    Clipped,
    Flatline,
}

impl ArtifactPolicy {
    pub fn clip(&self, rec: &EegRecording) -> EegRecording {
        let c = self.clip_uv;
        let rows = rec
            .samples
            .iter()
            .map(|r| r.iter().map(|v| v.clamp(-c, c)).collect())
            .collect();
        rec.with_samples(rec.sample_rate_hz, rows)
    }

    pub fn check(&self, epoch: &EegEpoch) -> Option<Rejection> {
        let rail = self.clip_uv * (1.0 - 1e-9);
        let clipped = epoch.data.iter().filter(|v| v.abs() >= rail).count();
        if clipped as f64 > self.max_clipped_fraction * epoch.data.len() as f64 {
            return Some(Rejection::Clipped);
        }
        let flat = (0..epoch.num_channels).all(|c| {
            let ch = epoch.channel(c);
            let (lo, hi) = ch
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                    (l.min(v), h.max(v))
                });
            hi - lo < self.flatline_uv
        });
        flat.then_some(Rejection::Flatline)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epoch(data: Vec<f64>, channels: usize) -> EegEpoch {
        let w = data.len() / channels;
        EegEpoch {
            data,
            num_channels: channels,
            window_samples: w,
            label: "bckg".into(),
            source_id: "r".into(),
            window_start_s: 0.0,
        }
    }

    #[test]
    fn clip_and_reject() {
        let p = ArtifactPolicy::default();
        let rec = EegRecording::new(
            "r",
            10.0,
            vec!["a".into()],
            vec![vec![900.0, -700.0, 3.0]],
            vec![],
        )
        .unwrap();
        assert_eq!(p.clip(&rec).samples[0], vec![500.0, -500.0, 3.0]);
        assert_eq!(
            p.check(&epoch(vec![500.0, 1.0, 2.0, 3.0], 1)),
            Some(Rejection::Clipped)
        );
        assert_eq!(p.check(&epoch(vec![1.0; 8], 2)), Some(Rejection::Flatline));
        assert_eq!(
            p.check(&epoch(vec![1.0, 1.0, 1.0, 1.0, 0.0, 3.0, 1.0, 2.0], 2)),
            None
        );
    }
}
