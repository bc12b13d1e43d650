//! Evaluation metrics: ROC AUC (Mann-Whitney with 0.5 tie credit), recall /
//! false-alarm rates at the 0.5 decision rule, and per-label plus pooled
//! ("overall") reports over observed entries only.

use serde::{Deserialize, Serialize};

use crate::loss::LabeledBatchTargets;

/// ROC AUC as the Mann-Whitney statistic: the fraction of (positive,
/// negative) pairs ranked correctly, ties credited 0.5. Returns `None` when
/// either class is absent (the AUC is undefined, not zero).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }

    // Average ranks over tie groups; rank sums of half-integers stay exact
    // in f64, so this matches pairwise counting bit for bit.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    let mut rank_sum_positive = 0.0f64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks are 1-based: the tie group spans ranks start+1 ..= end.
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            if labels[idx] {
                rank_sum_positive += avg_rank;
            }
        }
        start = end;
    }

    let p = positives as f64;
    let u = rank_sum_positive - p * (p + 1.0) / 2.0;
    Some(u / (p * negatives as f64))
}

/// Recall and false-alarm ratio under the "positive iff score > threshold"
/// rule (0/0 counts as 0).
pub fn confusion_rates(scores: &[f64], labels: &[bool], threshold: f64) -> (f64, f64) {
    assert_eq!(scores.len(), labels.len());
    let mut tp = 0u64;
    let mut fn_ = 0u64;
    let mut fp = 0u64;
    let mut tn = 0u64;
    for (&s, &l) in scores.iter().zip(labels) {
        let predicted = s > threshold;
        match (l, predicted) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let false_alarm = if fp + tn == 0 {
        0.0
    } else {
        fp as f64 / (fp + tn) as f64
    };
    (recall, false_alarm)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub name: String,
    pub positives: usize,
    pub negatives: usize,
    pub recall: f64,
    pub false_alarm: f64,
    /// Absent when the label has a single class among observed entries.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub recall: f64,
    pub false_alarm: f64,
    pub auc: Option<f64>,
}

/// Per-label and overall evaluation. "Overall" pools every observed
/// (sample, label) pair (micro); macro averages of the per-label rates are
/// reported alongside, with undefined AUCs excluded from the average.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_label: Vec<LabelMetrics>,
    pub overall: OverallMetrics,
    pub macro_avg: OverallMetrics,
}

const DECISION_THRESHOLD: f64 = 0.5;

/// Evaluate batch-by-labels scores against observed targets. `names` labels
/// the report rows and must have one entry per label column.
pub fn evaluate(scores: &[f64], targets: &LabeledBatchTargets, names: &[String]) -> EvalReport {
    let b = targets.batch;
    let c = targets.labels;
    assert_eq!(scores.len(), b * c);
    assert_eq!(names.len(), c);
    assert!(targets.observed() > 0, "no observed entries to evaluate");

    let mut per_label = Vec::with_capacity(c);
    let mut pooled_scores = Vec::new();
    let mut pooled_labels = Vec::new();
    for label in 0..c {
        let mut s = Vec::new();
        let mut l = Vec::new();
        for sample in 0..b {
            let idx = sample * c + label;
            if targets.mask[idx] == 0.0 {
                continue;
            }
            s.push(scores[idx]);
            l.push(targets.y[idx] != 0.0);
        }
        pooled_scores.extend_from_slice(&s);
        pooled_labels.extend_from_slice(&l);
        let (recall, false_alarm) = confusion_rates(&s, &l, DECISION_THRESHOLD);
        let positives = l.iter().filter(|&&x| x).count();
        per_label.push(LabelMetrics {
            name: names[label].clone(),
            positives,
            negatives: l.len() - positives,
            recall,
            false_alarm,
            auc: roc_auc(&s, &l),
        });
    }

    let (recall, false_alarm) = confusion_rates(&pooled_scores, &pooled_labels, DECISION_THRESHOLD);
    let overall = OverallMetrics {
        recall,
        false_alarm,
        auc: roc_auc(&pooled_scores, &pooled_labels),
    };

    let defined_aucs: Vec<f64> = per_label.iter().filter_map(|m| m.auc).collect();
    let macro_avg = OverallMetrics {
        recall: per_label.iter().map(|m| m.recall).sum::<f64>() / c as f64,
        false_alarm: per_label.iter().map(|m| m.false_alarm).sum::<f64>() / c as f64,
        auc: if defined_aucs.is_empty() {
            None
        } else {
            Some(defined_aucs.iter().sum::<f64>() / defined_aucs.len() as f64)
        },
    };

    EvalReport {
        per_label,
        overall,
        macro_avg,
    }
}

impl EvalReport {
    /// Aligned text table for terminal output.
    pub fn render_table(&self) -> String {
        let fmt_auc = |auc: Option<f64>| match auc {
            Some(v) => format!("{v:.4}"),
            None => "undef".to_string(),
        };
        let name_width = self
            .per_label
            .iter()
            .map(|m| m.name.len())
            .chain(["macro avg".len()])
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = String::new();
        out.push_str(&format!(
            "{:<name_width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}\n",
            "label", "pos", "neg", "recall", "f-alarm", "auc"
        ));
        for m in &self.per_label {
            out.push_str(&format!(
                "{:<name_width$}  {:>7}  {:>7}  {:>7.4}  {:>7.4}  {:>7}\n",
                m.name,
                m.positives,
                m.negatives,
                m.recall,
                m.false_alarm,
                fmt_auc(m.auc)
            ));
        }
        out.push_str(&format!(
            "{:<name_width$}  {:>7}  {:>7}  {:>7.4}  {:>7.4}  {:>7}\n",
            "overall",
            "",
            "",
            self.overall.recall,
            self.overall.false_alarm,
            fmt_auc(self.overall.auc)
        ));
        out.push_str(&format!(
            "{:<name_width$}  {:>7}  {:>7}  {:>7.4}  {:>7.4}  {:>7}\n",
            "macro avg",
            "",
            "",
            self.macro_avg.recall,
            self.macro_avg.false_alarm,
            fmt_auc(self.macro_avg.auc)
        ));
        out
    }
}
