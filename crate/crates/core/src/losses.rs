//! Plain `f64` loss arithmetic over row-major logit rows. The training
//! graphs compute the same quantities with autodiff ops; these versions
//! are the independent reference.

use crate::error::{CoreError, Result};

pub fn log_softmax_row(row: &[f64], temperature: f64) -> Vec<f64> {
    let m = row
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b / temperature));
    let lse = m + row
        .iter()
        .map(|&v| (v / temperature - m).exp())
        .sum::<f64>()
        .ln();
    row.iter().map(|&v| v / temperature - lse).collect()
}

pub fn softmax_row(row: &[f64], temperature: f64) -> Vec<f64> {
    log_softmax_row(row, temperature)
        .into_iter()
        .map(f64::exp)
        .collect()
}

pub fn softmax_rows(rows: &[Vec<f64>], temperature: f64) -> Vec<Vec<f64>> {
    rows.iter().map(|r| softmax_row(r, temperature)).collect()
}

fn check_targets(rows: &[Vec<f64>], targets: &[usize]) -> Result<()> {
    if rows.len() != targets.len() {
        return Err(CoreError::Mismatch(format!(
            "{} logit rows but {} targets",
            rows.len(),
            targets.len()
        )));
    }
    for (r, &t) in rows.iter().zip(targets) {
        if t >= r.len() {
            return Err(CoreError::TargetOutOfRange {
                target: t,
                classes: r.len(),
            });
        }
    }
    Ok(())
}

/// Mean of `−log softmax(row)[target]`.
pub fn cross_entropy(rows: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    check_targets(rows, targets)?;
    if rows.is_empty() {
        return Err(CoreError::Mismatch("cross-entropy of zero rows".into()));
    }
    let total: f64 = rows
        .iter()
        .zip(targets)
        .map(|(r, &t)| -log_softmax_row(r, 1.0)[t])
        .sum();
    Ok(total / rows.len() as f64)
}

/// Cross-entropy against target distributions, averaged over rows with
/// nonzero target mass.
pub fn soft_cross_entropy(rows: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if rows.len() != targets.len() {
        return Err(CoreError::Mismatch(format!(
            "{} logit rows but {} target rows",
            rows.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    let mut active = 0usize;
    for (r, q) in rows.iter().zip(targets) {
        if q.iter().all(|&v| v == 0.0) {
            continue;
        }
        let lp = log_softmax_row(r, 1.0);
        total -= q.iter().zip(&lp).map(|(a, b)| a * b).sum::<f64>();
        active += 1;
    }
    if active == 0 {
        return Err(CoreError::Mismatch("every target row is empty".into()));
    }
    Ok(total / active as f64)
}

pub fn transpose(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    (0..cols)
        .map(|j| rows.iter().map(|r| r[j]).collect())
        .collect()
}
