//! Classification metrics reported per engagement class.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction and truth lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("label {0} is outside {{0,1,2}}")]
    InvalidLabel(usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("ROC needs both positive and negative samples")]
    SingleClassTruth,
    #[error("AUC {0} outside [0,1]")]
    OutOfRange(f64),
    #[error("probabilities do not form a distribution")]
    NotADistribution,
    #[error("non-finite score")]
    NonFiniteScore,
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

/// One-vs-rest collapse of a confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryCounts {
    /// Swap the roles of positives and negatives.
    pub fn inverted(self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn one_vs_rest(&self, class: usize) -> BinaryCounts {
        let tp = self.counts[class][class];
        let fn_ = self.counts[class].iter().sum::<u64>() - tp;
        let fp = (0..NUM_CLASSES).map(|t| self.counts[t][class]).sum::<u64>() - tp;
        let tn = self.total() - tp - fn_ - fp;
        BinaryCounts { tp, fp, fn_, tn }
    }
}

fn check_label(l: usize) -> Result<usize, MetricsError> {
    if l < NUM_CLASSES {
        Ok(l)
    } else {
        Err(MetricsError::InvalidLabel(l))
    }
}

pub fn confusion_matrix(
    y_true: &[usize],
    y_pred: &[usize],
) -> Result<ConfusionMatrix, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        cm.counts[check_label(t)?][check_label(p)?] += 1;
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// A ratio with a flag set when its denominator was zero (value reported as 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flagged {
    pub value: f64,
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> Flagged {
    if den == 0 {
        Flagged {
            value: 0.0,
            degenerate: true,
        }
    } else {
        Flagged {
            value: num as f64 / den as f64,
            degenerate: false,
        }
    }
}

/// Sensitivity TP/(TP+FN) and precision TP/(TP+FP) for one class.
pub fn sensitivity_precision(cm: &ConfusionMatrix, class: usize) -> (Flagged, Flagged) {
    let b = cm.one_vs_rest(class);
    (ratio(b.tp, b.tp + b.fn_), ratio(b.tp, b.tp + b.fp))
}

fn f_beta(precision: f64, recall: f64, beta: f64) -> Option<f64> {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    (den > 0.0).then(|| (1.0 + b2) * precision * recall / den)
}

/// Geometric mean of F₂ on the class and F₀.₅ on the label-inverted matrix.
pub fn agf(cm: &ConfusionMatrix, class: usize) -> Flagged {
    let counts = cm.one_vs_rest(class);
    let score = |b: BinaryCounts, beta: f64| {
        let p = ratio(b.tp, b.tp + b.fp);
        let r = ratio(b.tp, b.tp + b.fn_);
        if p.degenerate || r.degenerate {
            None
        } else {
            f_beta(p.value, r.value, beta)
        }
    };
    match (score(counts, 2.0), score(counts.inverted(), 0.5)) {
        (Some(f2), Some(inv)) if f2 > 0.0 && inv > 0.0 => Flagged {
            value: (f2 * inv).sqrt(),
            degenerate: false,
        },
        _ => Flagged {
            value: 0.0,
            degenerate: true,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `thresholds[k]` produces `points[k]`; the first is +∞ for (0, 0).
    pub thresholds: Vec<f64>,
    pub points: Vec<(f64, f64)>,
}

/// ROC over every distinct score and its trapezoidal area.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<(RocCurve, f64), MetricsError> {
    if scores.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), truth.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClassTruth);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut thresholds = vec![f64::INFINITY];
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (fpr, tpr) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        let &(pf, pt) = points.last().unwrap();
        auc += (fpr - pf) * (tpr + pt) / 2.0;
        thresholds.push(s);
        points.push((fpr, tpr));
    }
    Ok((RocCurve { thresholds, points }, auc))
}

/// Ranking Gini, 2·AUC − 1.
pub fn gini_coefficient(auc: f64) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&auc) {
        return Err(MetricsError::OutOfRange(auc));
    }
    Ok(2.0 * auc - 1.0)
}

/// Impurity 1 − Σ pᵢ².
pub fn gini_impurity(probabilities: &[f64]) -> Result<f64, MetricsError> {
    let sum: f64 = probabilities.iter().sum();
    if probabilities.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(MetricsError::NotADistribution);
    }
    Ok(1.0 - probabilities.iter().map(|p| p * p).sum::<f64>())
}

pub type PerClass = BTreeMap<String, f64>;

/// Table-style evaluation of one method on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub acc: f64,
    pub gini: PerClass,
    pub auc: PerClass,
    pub agf: PerClass,
    pub sensitivity: PerClass,
    pub precision: PerClass,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl MetricReport {
    pub fn class_value(map: &PerClass, class: usize) -> f64 {
        map[&class.to_string()]
    }
}

/// `0:v,1:v,2:v` with values rounded to `digits` decimals.
pub fn format_per_class(map: &PerClass, digits: usize) -> String {
    let mut s = String::new();
    for (i, (k, v)) in map.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{k}:{v:.digits$}");
    }
    s
}

pub fn evaluate_method(
    method: &str,
    y_true: &[usize],
    class_scores: &[[f64; NUM_CLASSES]],
    y_pred: &[usize],
) -> Result<MetricReport, MetricsError> {
    if class_scores.len() != y_true.len() {
        return Err(MetricsError::LengthMismatch(
            y_true.len(),
            class_scores.len(),
        ));
    }
    let cm = confusion_matrix(y_true, y_pred)?;
    let acc = accuracy(&cm)?;
    let mut report = MetricReport {
        method: method.to_string(),
        acc,
        gini: PerClass::new(),
        auc: PerClass::new(),
        agf: PerClass::new(),
        sensitivity: PerClass::new(),
        precision: PerClass::new(),
        flags: Vec::new(),
    };
    for c in 0..NUM_CLASSES {
        let key = c.to_string();
        let scores: Vec<f64> = class_scores.iter().map(|s| s[c]).collect();
        let truth: Vec<bool> = y_true.iter().map(|&t| t == c).collect();
        let (_, auc) = roc_auc(&scores, &truth)?;
        report.auc.insert(key.clone(), auc);
        report.gini.insert(key.clone(), gini_coefficient(auc)?);
        let a = agf(&cm, c);
        if a.degenerate {
            report.flags.push(format!("agf:{c}"));
        }
        report.agf.insert(key.clone(), a.value);
        let (sens, prec) = sensitivity_precision(&cm, c);
        if sens.degenerate {
            report.flags.push(format!("sensitivity:{c}"));
        }
        if prec.degenerate {
            report.flags.push(format!("precision:{c}"));
        }
        report.sensitivity.insert(key.clone(), sens.value);
        report.precision.insert(key, prec.value);
    }
    Ok(report)
}
