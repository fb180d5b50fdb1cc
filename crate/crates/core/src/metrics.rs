//! Predictive-accuracy and reliability metrics for binary outcomes.

use std::cmp::Ordering;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped into `[floor, 1 - floor]` for the log-likelihood.
pub const NLL_FLOOR: f64 = 1e-12;
/// A sample is predicted positive when `p(positive)` exceeds this.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

pub fn confusion(labels: &[bool], predicted: &[bool]) -> Result<Confusion> {
    if labels.len() != predicted.len() {
        return Err(Error::dims("confusion predictions", labels.len(), predicted.len()));
    }
    let mut c = Confusion::default();
    for (&y, &p) in labels.iter().zip(predicted) {
        match (y, p) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Ratios derived from a confusion matrix. A ratio with a zero denominator
/// is reported as 0 and listed in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub npv: f64,
    pub bacc: f64,
    pub f1: f64,
    pub undefined: Vec<String>,
}

pub fn rates(c: &Confusion) -> Rates {
    let mut undefined = Vec::new();
    let mut ratio = |name: &str, num: u64, den: u64| {
        if den == 0 {
            undefined.push(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio("precision", c.tp, c.tp + c.fp);
    let recall = ratio("recall", c.tp, c.tp + c.fn_);
    let specificity = ratio("specificity", c.tn, c.tn + c.fp);
    let npv = ratio("npv", c.tn, c.tn + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        undefined.push("f1".into());
        0.0
    };
    Rates {
        precision,
        recall,
        specificity,
        npv,
        bacc: 0.5 * (recall + specificity),
        f1,
        undefined,
    }
}

fn counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y).count();
    (pos, labels.len() - pos)
}

fn check_scores<T: Float>(scores: &[T], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::dims("metric scores", labels.len(), scores.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("metric scores".into()));
    }
    Ok(())
}

fn descending<T: Float>(scores: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

/// Area under the ROC curve via the Mann-Whitney statistic with midranks.
pub fn auroc<T: Float>(scores: &[T], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let (pos, neg) = counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput("AUROC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (pos, neg) = (pos as f64, neg as f64);
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

/// Area under the precision-recall curve as average precision: precision is
/// held constant between recall steps, with tied scores forming one step.
pub fn auprc<T: Float>(scores: &[T], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let (pos, _) = counts(labels);
    if pos == 0 {
        return Err(Error::InvalidInput("AUPRC needs positive samples".into()));
    }
    let order = descending(scores);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        tp += order[i..=j].iter().filter(|&&k| labels[k]).count();
        seen += j - i + 1;
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * tp as f64 / seen as f64;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

fn check_probs<T: Float>(probs: &[T], labels: &[bool]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(Error::dims("metric probabilities", labels.len(), probs.len()));
    }
    if probs.is_empty() {
        return Err(Error::InvalidInput("no samples to score".into()));
    }
    if let Some(p) = probs.iter().find(|&&p| !(p >= T::zero() && p <= T::one())) {
        return Err(Error::InvalidInput(format!(
            "probability {} outside [0, 1]",
            p.to_f64().unwrap_or(f64::NAN)
        )));
    }
    Ok(())
}

/// Mean squared difference between `p(positive)` and the outcome.
pub fn brier<T: Float>(probs: &[T], labels: &[bool]) -> Result<f64> {
    check_probs(probs, labels)?;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let d = p.to_f64().unwrap_or(f64::NAN) - if y { 1.0 } else { 0.0 };
            d * d
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Mean negative log-likelihood of the outcomes.
pub fn nll<T: Float>(probs: &[T], labels: &[bool]) -> Result<f64> {
    check_probs(probs, labels)?;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.to_f64().unwrap_or(f64::NAN).clamp(NLL_FLOOR, 1.0 - NLL_FLOOR);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub npv: f64,
    pub bacc: f64,
    pub f1: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub brier: f64,
    pub nll: f64,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 10] = [
        "precision",
        "recall",
        "specificity",
        "npv",
        "bacc",
        "f1",
        "auroc",
        "auprc",
        "brier",
        "nll",
    ];

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "precision" => self.precision,
            "recall" => self.recall,
            "specificity" => self.specificity,
            "npv" => self.npv,
            "bacc" => self.bacc,
            "f1" => self.f1,
            "auroc" => self.auroc,
            "auprc" => self.auprc,
            "brier" => self.brier,
            "nll" => self.nll,
            _ => return None,
        })
    }
}

/// Full report from positive-class probabilities. Rank metrics that are
/// undefined on single-class data are reported as 0 and flagged.
pub fn evaluate(p_positive: &[f64], labels: &[bool]) -> Result<MetricsReport> {
    check_probs(p_positive, labels)?;
    let predicted: Vec<bool> = p_positive.iter().map(|&p| p > DECISION_THRESHOLD).collect();
    let c = confusion(labels, &predicted)?;
    let r = rates(&c);
    let mut undefined = r.undefined;
    let mut ranked = |name: &str, value: Result<f64>| match value {
        Ok(v) => v,
        Err(Error::InvalidInput(_)) => {
            undefined.push(name.to_string());
            0.0
        }
        Err(_) => f64::NAN,
    };
    let auroc_v = ranked("auroc", auroc(p_positive, labels));
    let auprc_v = ranked("auprc", auprc(p_positive, labels));
    Ok(MetricsReport {
        precision: r.precision,
        recall: r.recall,
        specificity: r.specificity,
        npv: r.npv,
        bacc: r.bacc,
        f1: r.f1,
        auroc: auroc_v,
        auprc: auprc_v,
        brier: brier(p_positive, labels)?,
        nll: nll(p_positive, labels)?,
        tp: c.tp,
        tn: c.tn,
        fp: c.fp,
        fn_: c.fn_,
        undefined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn hand_confusion_rates() {
        let r = rates(&Confusion { tp: 3, tn: 5, fp: 1, fn_: 1 });
        assert_eq!(r.precision, 0.75);
        assert_eq!(r.recall, 0.75);
        assert!((r.specificity - 5.0 / 6.0).abs() < 1e-15);
        assert!((r.bacc - 0.791_666_666_666_666_7).abs() < 1e-12);
        assert!((r.f1 - 0.75).abs() < 1e-15);
        assert!(r.undefined.is_empty());
    }

    #[test]
    fn perfect_and_all_negative_predictors() {
        let labels = b(&[1, 0, 1, 0, 0]);
        let r = rates(&confusion(&labels, &labels).unwrap());
        for v in [r.precision, r.recall, r.specificity, r.npv, r.bacc, r.f1] {
            assert_eq!(v, 1.0);
        }
        let r = rates(&confusion(&labels, &[false; 5]).unwrap());
        assert_eq!((r.recall, r.specificity, r.bacc), (0.0, 1.0, 0.5));
        assert!(r.undefined.contains(&"precision".to_string()));
    }

    #[test]
    fn auroc_examples() {
        let labels = b(&[0, 0, 1, 1]);
        assert_eq!(auroc(&[0.0, 0.0, 1.0, 1.0], &labels).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 4], &labels).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &labels).unwrap(), 0.75);
        assert!(auroc(&[0.1, 0.2], &b(&[1, 1])).is_err());
    }

    #[test]
    fn auprc_examples() {
        let labels = b(&[0, 0, 1, 1]);
        assert_eq!(auprc(&[0.0, 0.0, 1.0, 1.0], &labels).unwrap(), 1.0);
        let ap = auprc(&[0.1, 0.4, 0.35, 0.8], &labels).unwrap();
        assert!((ap - 0.833_333_333_333_333_4).abs() < 1e-12);
        assert!(auprc(&[0.1, 0.2], &b(&[0, 0])).is_err());
    }

    #[test]
    fn calibration_examples() {
        let labels = b(&[1, 0]);
        assert_eq!(brier(&[1.0, 0.0], &labels).unwrap(), 0.0);
        assert!(nll(&[1.0, 0.0], &labels).unwrap() < 1e-11);
        assert_eq!(brier(&[0.5, 0.5], &labels).unwrap(), 0.25);
        assert!((nll(&[0.5, 0.5], &labels).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((brier(&[0.8, 0.3], &labels).unwrap() - 0.065).abs() < 1e-15);
        let expected = (-(0.8f64.ln()) - 0.7f64.ln()) / 2.0;
        assert!((nll(&[0.8, 0.3], &labels).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.289_90).abs() < 1e-5);
        assert!(brier(&[1.2, 0.0], &labels).is_err());
    }

    #[test]
    fn report_flags_single_class_rankings() {
        let r = evaluate(&[0.2, 0.7], &[false, false]).unwrap();
        assert!(r.undefined.contains(&"auroc".to_string()));
        assert_eq!(r.fp, 1);
    }

    #[test]
    fn report_json_uses_fn_key() {
        let r = evaluate(&[0.9, 0.1, 0.4], &b(&[1, 0, 1])).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["fn"], 1);
        assert_eq!(json["tp"], 1);
    }
}
