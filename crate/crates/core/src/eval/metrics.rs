use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores at or above this value are predicted positive.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Contract(format!("label {bad} not in {{0,1}}")));
    }
    Ok(())
}

pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Confusion> {
    check_lengths(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 of one class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics { precision, recall, f1 }
    }
}

/// Metrics for the negative (index 0) and positive (index 1) class. Empty
/// denominators give 0.
pub fn per_class(c: &Confusion) -> [ClassMetrics; 2] {
    [
        ClassMetrics::new(ratio(c.tn, c.tn + c.fn_), ratio(c.tn, c.tn + c.fp)),
        ClassMetrics::new(ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_)),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Macro average over both classes.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the evaluated labels contain no positive.
    pub pr_auc: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn confusion(&self) -> Confusion {
        Confusion {
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
        }
    }
}

/// Threshold metrics from counts; `pr_auc` is left unset.
pub fn classification_metrics(c: &Confusion) -> Result<MetricsReport> {
    let n = c.total();
    if n == 0 {
        return Err(Error::Metric("no samples to evaluate".into()));
    }
    let [neg, pos] = per_class(c);
    Ok(MetricsReport {
        accuracy: (c.tp + c.tn) as f64 / n as f64,
        precision: (neg.precision + pos.precision) / 2.0,
        recall: (neg.recall + pos.recall) / 2.0,
        f1: (neg.f1 + pos.f1) / 2.0,
        pr_auc: None,
        tp: c.tp,
        fp: c.fp,
        tn: c.tn,
        fn_: c.fn_,
        n_samples: n,
    })
}

/// Average precision: walking down the ranking one distinct score at a
/// time, each group of tied scores adds `precision × Δrecall`.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(Error::Metric("PR-AUC undefined without positive labels".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut group_pos = 0;
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                group_pos += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        tp += group_pos;
        if group_pos > 0 {
            ap += (tp as f64 / (tp + fp) as f64) * (group_pos as f64 / positives as f64);
        }
    }
    Ok(ap)
}

/// Threshold metrics plus PR-AUC (when defined).
pub fn evaluate_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    let mut report = classification_metrics(&confusion(scores, labels, threshold)?)?;
    report.pr_auc = match pr_auc(scores, labels) {
        Ok(v) => Some(v),
        Err(Error::Metric(_)) if report.tp + report.fn_ == 0 => None,
        Err(e) => return Err(e),
    };
    Ok(report)
}

/// Arithmetic means of fold metrics. PR-AUC averages only the folds where
/// it is defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pr_auc: Option<f64>,
}

impl MeanMetrics {
    pub fn of(reports: &[MetricsReport]) -> Result<MeanMetrics> {
        if reports.is_empty() {
            return Err(Error::Metric("no reports to average".into()));
        }
        let n = reports.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let defined: Vec<f64> = reports.iter().filter_map(|r| r.pr_auc).collect();
        Ok(MeanMetrics {
            accuracy: mean(|r| r.accuracy),
            precision: mean(|r| r.precision),
            recall: mean(|r| r.recall),
            f1: mean(|r| r.f1),
            pr_auc: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        })
    }
}
