//! Annotation-driven windowing.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SignalError};
use crate::recording::{EegEpoch, EegRecording, BACKGROUND};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationPolicy {
    pub epoch_seconds: f64,
    pub seizure_overlap: f64,
    pub nonseizure_overlap: f64,
    /// Target background:seizure count after balancing.
    pub balance_ratio: f64,
    /// Also emit seizure-grid windows that start inside an interval but
    /// run past its end.
    pub keep_boundary_windows: bool,
}

impl Default for SegmentationPolicy {
    fn default() -> Self {
        SegmentationPolicy {
            epoch_seconds: 1.0,
            seizure_overlap: 0.5,
            nonseizure_overlap: 0.0,
            balance_ratio: 1.0,
            keep_boundary_windows: false,
        }
    }
}

impl SegmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SignalError::InvalidPolicy(m));
        if !(self.epoch_seconds > 0.0) {
            return bad(format!(
                "epoch_seconds {} must be positive",
                self.epoch_seconds
            ));
        }
        for (name, v) in [
            ("seizure_overlap", self.seizure_overlap),
            ("nonseizure_overlap", self.nonseizure_overlap),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1)"));
            }
        }
        if !(self.balance_ratio > 0.0) {
            return bad(format!(
                "balance_ratio {} must be positive",
                self.balance_ratio
            ));
        }
        Ok(())
    }

    pub fn window_samples(&self, rate_hz: f64) -> usize {
        (self.epoch_seconds * rate_hz).round() as usize
    }

    /// Grid strides in samples, never below 1.
    pub fn strides(&self, rate_hz: f64) -> (usize, usize) {
        let w = self.window_samples(rate_hz) as f64;
        let s = |o: f64| ((w * (1.0 - o)).round() as usize).max(1);
        (s(self.nonseizure_overlap), s(self.seizure_overlap))
    }
}

/// Annotation interval in samples, `[start, end)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleInterval {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

pub fn sample_intervals(rec: &EegRecording) -> Vec<SampleInterval> {
    let n = rec.num_samples();
    rec.annotations
        .iter()
        .map(|a| SampleInterval {
            start: ((a.onset_s * rec.sample_rate_hz).round() as usize).min(n),
            end: ((a.offset_s * rec.sample_rate_hz).round() as usize).min(n),
            label: a.label.clone(),
        })
        .collect()
}

/// Window start plus its label.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPlan {
    pub start: usize,
    pub label: String,
}

/// Label of the interval overlapping `[start, start + w)` the most; ties go
/// to the earlier annotation. Background when nothing overlaps.
pub fn window_label(start: usize, w: usize, intervals: &[SampleInterval]) -> String {
    let mut best: Option<(usize, &str)> = None;
    for iv in intervals {
        let lo = start.max(iv.start);
        let hi = (start + w).min(iv.end);
        let ov = hi.saturating_sub(lo);
        if ov >= 1 && best.is_none_or(|(b, _)| ov > b) {
            best = Some((ov, &iv.label));
        }
    }
    best.map_or_else(|| BACKGROUND.to_string(), |(_, l)| l.to_string())
}

/// Window starts: background grid from sample 0, one seizure grid per
/// interval anchored at its onset, merged and sorted.
pub fn plan_windows(
    n: usize,
    w: usize,
    policy: &SegmentationPolicy,
    rate_hz: f64,
    intervals: &[SampleInterval],
) -> Vec<WindowPlan> {
    if w == 0 || w > n {
        return Vec::new();
    }
    let (bg_stride, sz_stride) = policy.strides(rate_hz);
    let mut starts: Vec<usize> = (0..=n - w).step_by(bg_stride).collect();
    for iv in intervals {
        let mut s = iv.start;
        loop {
            let fits = if policy.keep_boundary_windows {
                s < iv.end
            } else {
                s + w <= iv.end
            };
            if !fits || s + w > n {
                break;
            }
            starts.push(s);
            s += sz_stride;
        }
    }
    starts.sort_unstable();
    starts.dedup();
    starts
        .into_iter()
        .map(|start| WindowPlan {
            start,
            label: window_label(start, w, intervals),
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Segmentation {
    pub epochs: Vec<EegEpoch>,
    /// Set when the window does not fit in the recording at all.
    pub recording_too_short: bool,
}

pub fn segment(rec: &EegRecording, policy: &SegmentationPolicy) -> Result<Segmentation> {
    policy.validate()?;
    rec.validate()?;
    let n = rec.num_samples();
    let w = policy.window_samples(rec.sample_rate_hz);
    if w == 0 || w > n {
        return Ok(Segmentation {
            epochs: Vec::new(),
            recording_too_short: true,
        });
    }
    let intervals = sample_intervals(rec);
    let epochs = plan_windows(n, w, policy, rec.sample_rate_hz, &intervals)
        .into_iter()
        .map(|p| {
            let mut data = Vec::with_capacity(w * rec.samples.len());
            for row in &rec.samples {
                data.extend_from_slice(&row[p.start..p.start + w]);
            }
            EegEpoch {
                data,
                num_channels: rec.samples.len(),
                window_samples: w,
                label: p.label,
                source_id: rec.id.clone(),
                window_start_s: p.start as f64 / rec.sample_rate_hz,
            }
        })
        .collect();
    Ok(Segmentation {
        epochs,
        recording_too_short: false,
    })
}
