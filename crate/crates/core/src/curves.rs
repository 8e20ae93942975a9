use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One line of a training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn write_ndjson<W: Write>(mut w: W, points: &[CurvePoint]) -> Result<()> {
    for p in points {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ndjson(text: &str) -> Result<Vec<CurvePoint>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// First epoch whose train accuracy reaches `threshold`.
pub fn epochs_to_threshold(points: &[CurvePoint], threshold: f64) -> Option<usize> {
    points
        .iter()
        .find(|p| p.split == "train" && p.accuracy >= threshold)
        .map(|p| p.epoch)
}
