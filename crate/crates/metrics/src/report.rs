use serde::Serialize;

use crate::auc::roc_auc;
use crate::confusion::ConfusionMatrix;
use crate::error::{MetricsError, Result};

/// Tolerance on probability row sums.
pub const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Rates {
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub spec: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub rates: Rates,
    /// One-vs-rest AUC; absent without both positives and negatives.
    pub auc: Option<f64>,
    pub support: u64,
    pub predicted: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted mean over classes seen in truth or predictions.
    pub macro_rates: Rates,
    /// Pooled one-vs-rest counts.
    pub micro_rates: Rates,
    pub macro_auc: Option<f64>,
    pub micro_auc: Option<f64>,
    pub samples: usize,
    pub warnings: Vec<String>,
}

pub fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn rates(tp: u64, fp: u64, fn_: u64, tn: u64) -> Rates {
    let pre = ratio(tp, tp + fp);
    let rec = ratio(tp, tp + fn_);
    Rates {
        acc: rec,
        pre,
        rec,
        spec: ratio(tn, tn + fp),
        f1: harmonic(pre, rec),
    }
}

/// First index of the row maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn check_probabilities(probs: &[Vec<f64>]) -> Result<()> {
    for (row, p) in probs.iter().enumerate() {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL
            || p.iter().any(|v| !(0.0..=1.0 + ROW_SUM_TOL).contains(v))
        {
            return Err(MetricsError::NotProbabilities { row, sum });
        }
    }
    Ok(())
}

/// Argmax predictions, one-vs-rest rates and AUCs. Per-class accuracy is
/// accuracy on that class's own samples, equal to its recall.
pub fn compute_metrics(truth: &[usize], probs: &[Vec<f64>]) -> Result<MetricsReport> {
    if truth.len() != probs.len() {
        return Err(MetricsError::Invalid(format!(
            "{} labels vs {} probability rows",
            truth.len(),
            probs.len()
        )));
    }
    if truth.is_empty() {
        return Err(MetricsError::Invalid("no samples".into()));
    }
    let c = probs[0].len();
    if c < 2 || probs.iter().any(|p| p.len() != c) {
        return Err(MetricsError::Invalid(
            "probability rows must share a width of at least 2".into(),
        ));
    }
    check_probabilities(probs)?;
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let confusion = ConfusionMatrix::from_labels(truth, &pred, c)?;
    let mut warnings = Vec::new();
    let mut per_class = Vec::with_capacity(c);
    let mut pooled = (0, 0, 0, 0);
    for k in 0..c {
        let (tp, fp, fn_, tn) = confusion.one_vs_rest(k);
        pooled = (pooled.0 + tp, pooled.1 + fp, pooled.2 + fn_, pooled.3 + tn);
        let scores: Vec<f64> = probs.iter().map(|p| p[k]).collect();
        let pos: Vec<bool> = truth.iter().map(|&t| t == k).collect();
        let auc = roc_auc(&scores, &pos);
        if auc.is_none() {
            warnings.push(format!(
                "class {k}: AUC undefined (needs positives and negatives), left out of macro AUC"
            ));
        }
        per_class.push(ClassMetrics {
            rates: rates(tp, fp, fn_, tn),
            auc,
            support: tp + fn_,
            predicted: tp + fp,
        });
    }
    let seen: Vec<&ClassMetrics> = per_class
        .iter()
        .filter(|m| m.support + m.predicted > 0)
        .collect();
    if seen.len() < c {
        warnings.push(format!(
            "{} class(es) absent from truth and predictions, left out of macro rates",
            c - seen.len()
        ));
    }
    let mean =
        |f: fn(&Rates) -> f64| seen.iter().map(|m| f(&m.rates)).sum::<f64>() / seen.len() as f64;
    let macro_rates = Rates {
        acc: mean(|r| r.acc),
        pre: mean(|r| r.pre),
        rec: mean(|r| r.rec),
        spec: mean(|r| r.spec),
        f1: mean(|r| r.f1),
    };
    let mut micro_rates = rates(pooled.0, pooled.1, pooled.2, pooled.3);
    micro_rates.acc = ratio(confusion.trace(), confusion.total());
    let aucs: Vec<f64> = per_class.iter().filter_map(|m| m.auc).collect();
    let macro_auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    let pooled_scores: Vec<f64> = probs.iter().flatten().copied().collect();
    let pooled_pos: Vec<bool> = truth
        .iter()
        .flat_map(|&t| (0..c).map(move |k| k == t))
        .collect();
    let micro_auc = roc_auc(&pooled_scores, &pooled_pos);
    Ok(MetricsReport {
        confusion,
        per_class,
        macro_rates,
        micro_rates,
        macro_auc,
        micro_auc,
        samples: truth.len(),
        warnings,
    })
}
