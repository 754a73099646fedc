//! Group fairness metrics on hard predictions and the differentiable
//! penalties used during training.
//!
//! Ratios are reported raw, protected over unprotected, and may exceed one.
//! [`Ratio::symmetric`] gives `min(r, 1/r)` for summaries.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Regularizer};
use crate::error::{Error, Result};
use crate::nn::{self, MlpParams};

/// Decision threshold on `P(f(x)=1)`; ties predict the positive class.
pub const THRESHOLD: f64 = 0.5;

/// A rate ratio that is undefined when a conditioning group is empty or the
/// denominator rate is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Ratio {
    Defined(f64),
    Undefined,
}

impl Ratio {
    pub fn value(self) -> Option<f64> {
        match self {
            Ratio::Defined(v) => Some(v),
            Ratio::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Ratio::Defined(_))
    }

    /// `min(r, 1/r)`, so that 1 is perfectly fair from either side.
    pub fn symmetric(self) -> Option<f64> {
        self.value().map(|r| if r > 1.0 { 1.0 / r } else { r })
    }
}

/// Hard predictions: 1 iff `P(f(x)=1) >= 0.5`.
pub fn predict_labels(params: &MlpParams, data: &Dataset) -> Result<Vec<u8>> {
    Ok(nn::positive_probabilities(params, data)?
        .into_iter()
        .map(|p| u8::from(p >= THRESHOLD))
        .collect())
}

fn positive_rate(pred: &[u8], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let (mut n, mut pos) = (0usize, 0usize);
    for (i, &p) in pred.iter().enumerate() {
        if keep(i) {
            n += 1;
            pos += p as usize;
        }
    }
    (n > 0).then(|| pos as f64 / n as f64)
}

fn rate_ratio(protected: Option<f64>, unprotected: Option<f64>) -> Ratio {
    match (protected, unprotected) {
        (Some(p), Some(u)) if u > 0.0 => Ratio::Defined(p / u),
        _ => Ratio::Undefined,
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            actual: b,
            context: "metric inputs",
        });
    }
    Ok(())
}

/// `P(Ŷ=1 | A=0) / P(Ŷ=1 | A=1)`.
pub fn dp_ratio(pred: &[u8], sensitive: &[u8]) -> Result<Ratio> {
    check_lengths(pred.len(), sensitive.len())?;
    Ok(rate_ratio(
        positive_rate(pred, |i| sensitive[i] == 0),
        positive_rate(pred, |i| sensitive[i] == 1),
    ))
}

/// `P(Ŷ=1 | A=0, Y=1) / P(Ŷ=1 | A=1, Y=1)`.
pub fn eo_ratio(pred: &[u8], labels: &[u8], sensitive: &[u8]) -> Result<Ratio> {
    check_lengths(pred.len(), labels.len())?;
    check_lengths(pred.len(), sensitive.len())?;
    Ok(rate_ratio(
        positive_rate(pred, |i| labels[i] == 1 && sensitive[i] == 0),
        positive_rate(pred, |i| labels[i] == 1 && sensitive[i] == 1),
    ))
}

/// `1 - mean P(f(x)=1)` over rows selected by `reg`; 0 if none are selected.
pub fn penalty(params: &MlpParams, data: &Dataset, reg: Regularizer) -> Result<f64> {
    let probs = nn::positive_probabilities(params, data)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, p) in probs.iter().enumerate() {
        if reg.applies(data.labels()[i], data.sensitive()[i]) {
            sum += p;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { 1.0 - sum / count as f64 })
}

/// Demographic-parity penalty over the protected rows.
pub fn reg_dp(params: &MlpParams, data: &Dataset) -> Result<f64> {
    penalty(params, data, Regularizer::DemographicParity)
}

/// Equal-opportunity penalty over the protected, positively labelled rows.
pub fn reg_eop(params: &MlpParams, data: &Dataset) -> Result<f64> {
    penalty(params, data, Regularizer::EqualOpportunity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub dp_ratio: Ratio,
    pub eo_ratio: Ratio,
    pub n: usize,
    pub n_protected: usize,
    pub n_protected_positive: usize,
}

/// Metrics from hard predictions against known labels.
pub fn metrics_from_predictions(pred: &[u8], labels: &[u8], sensitive: &[u8]) -> Result<EvalMetrics> {
    check_lengths(pred.len(), labels.len())?;
    check_lengths(pred.len(), sensitive.len())?;
    let n = pred.len();
    let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(EvalMetrics {
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        dp_ratio: dp_ratio(pred, sensitive)?,
        eo_ratio: eo_ratio(pred, labels, sensitive)?,
        n,
        n_protected: sensitive.iter().filter(|&&a| a == 0).count(),
        n_protected_positive: labels.iter().zip(sensitive).filter(|(&y, &a)| y == 1 && a == 0).count(),
    })
}

pub fn evaluate(params: &MlpParams, data: &Dataset) -> Result<EvalMetrics> {
    let pred = predict_labels(params, data)?;
    metrics_from_predictions(&pred, data.labels(), data.sensitive())
}
