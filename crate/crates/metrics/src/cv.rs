use serde::Serialize;

use crate::error::{MetricsError, Result};
use crate::folds::FoldPlan;
use crate::report::{compute_metrics, MetricsReport};

/// Held-out labels and predicted probabilities for one fold.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldOutcome {
    pub truth: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation over folds.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanStd::default();
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CvSummary {
    pub accuracy: MeanStd,
    pub macro_acc: MeanStd,
    pub macro_pre: MeanStd,
    pub macro_rec: MeanStd,
    pub macro_spec: MeanStd,
    pub macro_f1: MeanStd,
    pub macro_auc: MeanStd,
    pub micro_auc: MeanStd,
}

pub struct CrossValidation {
    pub folds: Vec<MetricsReport>,
    pub summary: CvSummary,
}

/// Run `train_eval(fold, train, test)` for every fold of `plan` and
/// aggregate the held-out metrics as unweighted fold means.
pub fn cross_validate<E, F>(plan: &FoldPlan, mut train_eval: F) -> Result<CrossValidation, E>
where
    E: From<MetricsError>,
    F: FnMut(usize, &[usize], &[usize]) -> Result<FoldOutcome, E>,
{
    let mut folds = Vec::with_capacity(plan.folds);
    for f in 0..plan.folds {
        let test = plan.test_indices(f);
        let train = plan.train_indices(f);
        let mut in_test = vec![false; plan.assignments.len()];
        test.iter().for_each(|&i| in_test[i] = true);
        if let Some(&i) = train.iter().find(|&&i| in_test[i]) {
            return Err(MetricsError::Leak { fold: f, index: i }.into());
        }
        let out = train_eval(f, &train, &test)?;
        folds.push(compute_metrics(&out.truth, &out.probs)?);
    }
    let col = |g: fn(&MetricsReport) -> f64| MeanStd::of(&folds.iter().map(g).collect::<Vec<_>>());
    let summary = CvSummary {
        accuracy: col(|r| r.micro_rates.acc),
        macro_acc: col(|r| r.macro_rates.acc),
        macro_pre: col(|r| r.macro_rates.pre),
        macro_rec: col(|r| r.macro_rates.rec),
        macro_spec: col(|r| r.macro_rates.spec),
        macro_f1: col(|r| r.macro_rates.f1),
        macro_auc: col(|r| r.macro_auc.unwrap_or(f64::NAN)),
        micro_auc: col(|r| r.micro_auc.unwrap_or(f64::NAN)),
    };
    Ok(CrossValidation { folds, summary })
}
