//! Per-class one-vs-rest metrics, support-weighted summaries, and the JSON
//! report. Zero-denominator metrics are reported as 0 and flagged rather
//! than poisoning aggregates with NaN.

use serde::Serialize;

use crate::confusion::ConfusionMatrix;
use crate::error::{MetricsError, Result};

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ClassMetrics {
    pub class: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Names of metrics whose denominator was zero.
    pub undefined: Vec<String>,
}

/// One-vs-rest counts and Eq-style ratios per class.
pub fn per_class_metrics(cm: &ConfusionMatrix) -> Result<Vec<ClassMetrics>> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let k = cm.k();
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.count(c, c);
        let fn_ = cm.row_sum(c) - tp;
        let fp = cm.col_sum(c) - tp;
        let tn = total - tp - fn_ - fp;
        let mut undefined = Vec::new();
        let precision = if tp + fp == 0 {
            undefined.push("precision".to_string());
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            undefined.push("recall".to_string());
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            undefined.push("f1".to_string());
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let accuracy = (tp + tn) as f64 / total as f64;
        out.push(ClassMetrics {
            class: cm.classes()[c].clone(),
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
            accuracy,
            undefined,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct WeightedSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// One-vs-rest accuracy averaged with the same support weights.
    pub accuracy: f64,
}

/// Support weights `s_c / total` for each class.
pub fn support_weights(supports: &[u64]) -> Result<Vec<f64>> {
    let total: u64 = supports.iter().sum();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(supports.iter().map(|&s| s as f64 / total as f64).collect())
}

/// Averages each per-class metric with weights proportional to class
/// support.
pub fn weighted_average(
    per_class: &[ClassMetrics],
    supports: &[u64],
) -> Result<WeightedSummary> {
    if per_class.len() != supports.len() {
        return Err(MetricsError::Input(format!(
            "{} metric rows vs {} supports",
            per_class.len(),
            supports.len()
        )));
    }
    let weights = support_weights(supports)?;
    let avg = |f: fn(&ClassMetrics) -> f64| -> f64 {
        per_class
            .iter()
            .zip(weights.iter())
            .map(|(m, &w)| w * f(m))
            .sum()
    };
    Ok(WeightedSummary {
        precision: avg(|m| m.precision),
        recall: avg(|m| m.recall),
        f1: avg(|m| m.f1),
        accuracy: avg(|m| m.accuracy),
    })
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub supports: Vec<u64>,
    pub per_class: Vec<ClassMetrics>,
    pub weighted: WeightedSummary,
    /// trace / total; distinct from the support-weighted one-vs-rest
    /// accuracy above.
    pub overall_accuracy: f64,
    pub flags: Vec<String>,
}

/// Full scoring pass over a confusion matrix.
pub fn score(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let per_class = per_class_metrics(cm)?;
    let supports = cm.supports();
    let weighted = weighted_average(&per_class, &supports)?;
    let overall_accuracy = cm.trace() as f64 / cm.total() as f64;
    let mut flags = Vec::new();
    for (c, m) in per_class.iter().enumerate() {
        for u in &m.undefined {
            flags.push(format!("{}:{}_undefined", cm.classes()[c], u));
        }
        if supports[c] == 0 {
            flags.push(format!("{}:zero_support", cm.classes()[c]));
        }
    }
    Ok(MetricsReport {
        classes: cm.classes().to_vec(),
        supports,
        per_class,
        weighted,
        overall_accuracy,
        flags,
    })
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

impl MetricsReport {
    /// Pretty JSON with float metrics rounded to four decimal places.
    pub fn to_json(&self) -> Result<String> {
        let mut rounded = self.clone();
        for m in &mut rounded.per_class {
            m.precision = round4(m.precision);
            m.recall = round4(m.recall);
            m.f1 = round4(m.f1);
            m.accuracy = round4(m.accuracy);
        }
        rounded.weighted.precision = round4(rounded.weighted.precision);
        rounded.weighted.recall = round4(rounded.weighted.recall);
        rounded.weighted.f1 = round4(rounded.weighted.f1);
        rounded.weighted.accuracy = round4(rounded.weighted.accuracy);
        rounded.overall_accuracy = round4(rounded.overall_accuracy);
        Ok(serde_json::to_string_pretty(&rounded)?)
    }
}
