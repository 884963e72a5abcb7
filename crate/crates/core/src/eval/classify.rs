use serde::{Deserialize, Serialize};

use super::{EvalError, Stat};
use crate::Scalar;

/// Turns continuous values into class labels. Both rules use strict
/// inequalities, so values on a cutoff fall to the negative or dropped side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdRule {
    /// `> t` positive, otherwise negative.
    Cutoff(f64),
    /// `> hi` positive, `< lo` negative, anything between dropped.
    Band { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binarized {
    /// `None` for values dropped by a band rule.
    pub labels: Vec<Option<bool>>,
    pub positives: usize,
    pub negatives: usize,
    pub dropped: usize,
}

impl Binarized {
    /// Indices and labels of the kept values.
    pub fn kept(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.labels.iter().enumerate().filter_map(|(i, l)| l.map(|l| (i, l)))
    }

    /// Fails unless both classes are present.
    pub fn require_both(&self) -> Result<(), EvalError> {
        if self.positives == 0 || self.negatives == 0 {
            return Err(EvalError::SingleClass { positives: self.positives, negatives: self.negatives });
        }
        Ok(())
    }
}

pub fn binarize<T: Scalar>(values: &[T], rule: ThresholdRule) -> Result<Binarized, EvalError> {
    if let ThresholdRule::Band { lo, hi } = rule {
        if !(lo <= hi) {
            return Err(EvalError::InvalidRule(format!("band lower bound {lo} above upper bound {hi}")));
        }
    }
    let mut labels = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(EvalError::NonFinite(i));
        }
        let v = v.as_f64();
        labels.push(match rule {
            ThresholdRule::Cutoff(t) => Some(v > t),
            ThresholdRule::Band { hi, .. } if v > hi => Some(true),
            ThresholdRule::Band { lo, .. } if v < lo => Some(false),
            ThresholdRule::Band { .. } => None,
        });
    }
    let positives = labels.iter().filter(|l| **l == Some(true)).count();
    let negatives = labels.iter().filter(|l| **l == Some(false)).count();
    Ok(Binarized { dropped: labels.len() - positives - negatives, labels, positives, negatives })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint<T> {
    /// Scores `>= threshold` are called positive.
    pub threshold: T,
    pub precision: T,
    pub recall: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve<T> {
    /// Ordered from the strictest threshold to the loosest.
    pub points: Vec<PrPoint<T>>,
    pub f1_best: T,
    /// Precision of a random classifier: the positive fraction.
    pub baseline_precision: T,
}

fn f1<T: Scalar>(p: T, r: T) -> T {
    if p + r == T::zero() {
        T::zero()
    } else {
        T::lit(2.0) * p * r / (p + r)
    }
}

/// Sweeps every distinct score as a threshold, highest first.
pub fn pr_curve<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<PrCurve<T>, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::new();
    let mut f1_best = T::zero();
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = T::from_usize_lossy(tp) / T::from_usize_lossy(tp + fp);
        let recall = T::from_usize_lossy(tp) / T::from_usize_lossy(positives);
        f1_best = f1_best.max(f1(precision, recall));
        points.push(PrPoint { threshold: t, precision, recall });
    }
    Ok(PrCurve { points, f1_best, baseline_precision: T::from_usize_lossy(positives) / T::from_usize_lossy(labels.len()) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSummary<T> {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Observed accuracy.
    pub rho_o: T,
    /// Agreement expected from the marginals alone.
    pub rho_e: T,
    pub kappa: Stat<T>,
}

impl<T: Scalar> ConfusionSummary<T> {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// F1 of the positive class; zero when nothing is predicted or present.
    pub fn f1(&self) -> T {
        let tp = T::from_usize_lossy(self.tp);
        let p = if self.tp + self.fp == 0 { T::zero() } else { tp / T::from_usize_lossy(self.tp + self.fp) };
        let r = if self.tp + self.fn_ == 0 { T::zero() } else { tp / T::from_usize_lossy(self.tp + self.fn_) };
        f1(p, r)
    }
}

/// `kappa = (rho_o - rho_e) / (1 - rho_e)`; undefined when `rho_e = 1`.
pub fn cohen_kappa<T: Scalar>(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<ConfusionSummary<T>, EvalError> {
    let n = tp + fp + tn + fn_;
    if n == 0 {
        return Err(EvalError::TooFew { need: 1, got: 0 });
    }
    let nf = T::from_usize_lossy(n);
    let c = T::from_usize_lossy;
    let rho_o = c(tp + tn) / nf;
    let rho_e = (c(tp + fp) * c(tp + fn_) + c(fn_ + tn) * c(fp + tn)) / (nf * nf);
    let kappa = if rho_e == T::one() { Stat::Undefined } else { Stat::Value((rho_o - rho_e) / (T::one() - rho_e)) };
    Ok(ConfusionSummary { tp, fp, tn, fn_, rho_o, rho_e, kappa })
}

/// Confusion counts of `predicted` against `actual`.
pub fn confusion<T: Scalar>(predicted: &[bool], actual: &[bool]) -> Result<ConfusionSummary<T>, EvalError> {
    if predicted.len() != actual.len() {
        return Err(EvalError::LengthMismatch(predicted.len(), actual.len()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    cohen_kappa(tp, fp, tn, fn_)
}
