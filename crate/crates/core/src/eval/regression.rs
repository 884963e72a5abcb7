use serde::{Deserialize, Serialize};

use super::{EvalError, Stat};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport<T> {
    pub n: usize,
    pub rmse: T,
    pub mae: T,
    pub r2: Stat<T>,
    pub pearson_r: Stat<T>,
    pub spearman_r: Stat<T>,
}

pub(crate) fn check_pair<T: Scalar>(a: &[T], b: &[T], need: usize) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < need {
        return Err(EvalError::TooFew { need, got: a.len() });
    }
    if let Some(i) = a.iter().zip(b).position(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    Ok(())
}

fn mean<T: Scalar>(v: &[T]) -> T {
    v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len())
}

/// Pearson correlation; undefined when either side has zero variance.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<Stat<T>, EvalError> {
    check_pair(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Ok(Stat::Undefined);
    }
    let r = sxy / (sxx * syy).sqrt();
    Ok(Stat::Value(r.max(-T::one()).min(T::one())))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn ranks<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite values"));
    let mut out = vec![T::zero(); v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = T::from_usize_lossy(i + j + 2) / T::lit(2.0);
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman<T: Scalar>(x: &[T], y: &[T]) -> Result<Stat<T>, EvalError> {
    check_pair(x, y, 2)?;
    pearson(&ranks(x), &ranks(y))
}

pub fn regression_metrics<T: Scalar>(predicted: &[T], actual: &[T]) -> Result<RegressionReport<T>, EvalError> {
    check_pair(predicted, actual, 2)?;
    let n = T::from_usize_lossy(predicted.len());
    let (mut sq, mut abs) = (T::zero(), T::zero());
    for (&p, &a) in predicted.iter().zip(actual) {
        sq += (p - a) * (p - a);
        abs += (p - a).abs();
    }
    let ma = mean(actual);
    let sst: T = actual.iter().map(|&a| (a - ma) * (a - ma)).sum();
    let r2 = if sst == T::zero() { Stat::Undefined } else { Stat::Value(T::one() - sq / sst) };
    let rmse = (sq / n).sqrt();
    let mae = abs / n;
    Ok(RegressionReport {
        n: predicted.len(),
        // guard the power-mean inequality against last-bit rounding
        rmse: rmse.max(mae),
        mae,
        r2,
        pearson_r: pearson(predicted, actual)?,
        spearman_r: spearman(predicted, actual)?,
    })
}
