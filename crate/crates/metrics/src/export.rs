//! CSV emitters for reports, ROC points, confusion matrices and channel
//! score maps.

use std::io::Write;

use crate::auc::roc_curve;
use crate::error::Result;
use crate::report::{MetricsReport, Rates};

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn rate_fields(r: &Rates) -> [String; 5] {
    [r.acc, r.pre, r.rec, r.spec, r.f1].map(|v| format!("{v:.6}"))
}

/// One row per class, then `overall` (macro) and `micro`.
pub fn write_report_csv<W: Write>(
    w: W,
    report: &MetricsReport,
    class_names: &[String],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["class", "acc", "pre", "rec", "spec", "f1", "auc", "support"])?;
    for (k, m) in report.per_class.iter().enumerate() {
        let name = class_names.get(k).cloned().unwrap_or_else(|| k.to_string());
        let mut row = vec![name];
        row.extend(rate_fields(&m.rates));
        row.push(fmt_opt(m.auc));
        row.push(m.support.to_string());
        out.write_record(&row)?;
    }
    for (name, rates, auc) in [
        ("overall", &report.macro_rates, report.macro_auc),
        ("micro", &report.micro_rates, report.micro_auc),
    ] {
        let mut row = vec![name.to_string()];
        row.extend(rate_fields(rates));
        row.push(fmt_opt(auc));
        row.push(report.samples.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_confusion_csv<W: Write>(
    w: W,
    report: &MetricsReport,
    class_names: &[String],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["true\\pred".to_string()];
    header.extend(class_names.iter().cloned());
    out.write_record(&header)?;
    for (name, row) in class_names.iter().zip(report.confusion.rows()) {
        let mut r = vec![name.clone()];
        r.extend(row.iter().map(u64::to_string));
        out.write_record(&r)?;
    }
    out.flush()?;
    Ok(())
}

/// One-vs-rest ROC points per class.
pub fn write_roc_csv<W: Write>(
    w: W,
    truth: &[usize],
    probs: &[Vec<f64>],
    class_names: &[String],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["class", "threshold", "fpr", "tpr"])?;
    for (k, name) in class_names.iter().enumerate() {
        let scores: Vec<f64> = probs.iter().map(|p| p[k]).collect();
        let pos: Vec<bool> = truth.iter().map(|&t| t == k).collect();
        for p in roc_curve(&scores, &pos).unwrap_or_default() {
            out.write_record([
                name.clone(),
                p.threshold.to_string(),
                format!("{:.6}", p.fpr),
                format!("{:.6}", p.tpr),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `epoch,channel,score` rows.
pub fn write_channel_scores_csv<W: Write>(
    w: W,
    channels: &[String],
    maps: &[Vec<f64>],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "channel", "score"])?;
    for (e, m) in maps.iter().enumerate() {
        for (c, s) in channels.iter().zip(m) {
            out.write_record([e.to_string(), c.clone(), format!("{s:.6}")])?;
        }
    }
    out.flush()?;
    Ok(())
}
