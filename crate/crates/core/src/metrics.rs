//! Bag-level evaluation metrics.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How per-class precision, recall and F1 are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    /// Class-support weighted.
    #[default]
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub auc: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub n_samples: usize,
    pub averaging: Averaging,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "ACC,AUC,F1,Recall,Precision";

    /// `ACC,AUC,F1,Recall,Precision` with shortest round-trip formatting.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.accuracy, self.auc, self.f1, self.recall, self.precision
        )
    }

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.auc, self.f1, self.recall, self.precision]
    }
}

/// Probability threshold for turning scores into class predictions.
pub const DECISION_THRESHOLD: f64 = 0.5;

pub fn threshold_predictions(probabilities: &[f64]) -> Vec<u8> {
    probabilities
        .iter()
        .map(|&p| u8::from(p >= DECISION_THRESHOLD))
        .collect()
}

/// Area under the ROC curve as the Mann–Whitney statistic: the fraction of
/// positive/negative pairs in which the positive scores higher, with ties
/// counted one half. Computed from mid-ranks in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // Twice the positive rank sum keeps mid-ranks integral.
    let mut doubled_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end, mid-rank = (start + 1 + end) / 2
        let doubled_mid = (start + 1 + end) as u64;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u64;
        doubled_rank_sum += doubled_mid * pos_in_group;
        start = end;
    }
    let p = positives as u64;
    // 2U = 2R − P(P + 1)
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / 2.0 / (positives * negatives) as f64)
}

/// Accuracy plus averaged precision, recall and F1 from hard predictions.
/// The returned report's `auc` is zero; fill it in separately.
///
/// A class that is never predicted has precision 0, and a class that never
/// occurs has recall 0.
pub fn confusion_metrics(preds: &[u8], labels: &[u8], averaging: Averaging) -> Result<MetricsReport> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::TooFewSamples("no predictions to score".into()));
    }
    let mut cm = [[0usize; 2]; 2]; // cm[truth][pred]
    for (&p, &y) in preds.iter().zip(labels) {
        cm[usize::from(y.min(1))][usize::from(p.min(1))] += 1;
    }
    let total = preds.len() as f64;
    let accuracy = (cm[0][0] + cm[1][1]) as f64 / total;

    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut f1 = 0.0;
    for class in 0..2 {
        let tp = cm[class][class];
        let predicted = cm[0][class] + cm[1][class];
        let support = cm[class][0] + cm[class][1];
        let p = ratio(tp, predicted);
        let r = ratio(tp, support);
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let weight = match averaging {
            Averaging::Macro => 0.5,
            Averaging::Weighted => support as f64 / total,
        };
        precision += weight * p;
        recall += weight * r;
        f1 += weight * f;
    }
    Ok(MetricsReport {
        accuracy,
        auc: 0.0,
        f1,
        recall,
        precision,
        n_samples: preds.len(),
        averaging,
    })
}

/// Full report from bag probabilities.
pub fn evaluate_probabilities(probabilities: &[f64], labels: &[u8], averaging: Averaging) -> Result<MetricsReport> {
    let preds = threshold_predictions(probabilities);
    let mut report = confusion_metrics(&preds, labels, averaging)?;
    report.auc = auc(probabilities, labels)?;
    Ok(report)
}

/// Unweighted mean of each metric across folds.
pub fn aggregate_cv(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports.first().ok_or(Error::EmptyReports)?;
    if reports.iter().any(|r| r.averaging != first.averaging) {
        return Err(Error::InvalidConfig("reports use different averaging modes".into()));
    }
    let k = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    Ok(MetricsReport {
        accuracy: mean(|r| r.accuracy),
        auc: mean(|r| r.auc),
        f1: mean(|r| r.f1),
        recall: mean(|r| r.recall),
        precision: mean(|r| r.precision),
        n_samples: reports.iter().map(|r| r.n_samples).sum(),
        averaging: first.averaging,
    })
}
