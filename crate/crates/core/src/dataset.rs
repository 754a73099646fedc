//! Binary fair-classification datasets and task descriptors.
//!
//! Sensitive attribute convention: `a == 0` marks the protected group and
//! `y == 1` the positive outcome.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Features `X` (row-major `n × d`), labels `Y` and sensitive attribute `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<u8>,
    sensitive: Vec<u8>,
    tag: Option<String>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<u8>, sensitive: Vec<u8>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidDataset("dataset has no rows".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidDataset("feature dimension is zero".into()));
        }
        if sensitive.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} labels but {} sensitive attributes",
                n,
                sensitive.len()
            )));
        }
        if features.len() != n * dim {
            return Err(Error::InvalidDataset(format!(
                "feature buffer has {} values, expected {} rows x {} columns",
                features.len(),
                n,
                dim
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(Error::InvalidDataset(format!("label at row {i} is not binary")));
        }
        if let Some(i) = sensitive.iter().position(|&a| a > 1) {
            return Err(Error::InvalidDataset(format!(
                "sensitive attribute at row {i} is not binary"
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("non-finite feature at row {}", i / dim)));
        }
        Ok(Dataset {
            features,
            dim,
            labels,
            sensitive,
            tag: None,
        })
    }

    /// Builds a dataset from per-row feature vectors.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>, sensitive: Vec<u8>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::InvalidDataset(format!("row {i} has a different width")));
        }
        Self::new(rows.concat(), dim, labels, sensitive)
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn tag(&self) -> Option<&str> {
        self.tag.as_deref()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sensitive(&self) -> &[u8] {
        &self.sensitive
    }

    /// Rows at `indices`, in that order; duplicates allowed. The tag is kept.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        let mut sensitive = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.len(),
                    actual: i,
                    context: "row index out of range",
                });
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            sensitive.push(self.sensitive[i]);
        }
        let mut out = Dataset::new(features, self.dim, labels, sensitive)?;
        out.tag = self.tag.clone();
        Ok(out)
    }

    /// Rows satisfying `keep(y, a)`, or `None` if no row does.
    pub fn filter(&self, keep: impl Fn(u8, u8) -> bool) -> Option<Dataset> {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| keep(self.labels[i], self.sensitive[i]))
            .collect();
        if idx.is_empty() {
            None
        } else {
            self.select(&idx).ok()
        }
    }

    /// Stacks `other` below `self`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
                context: "concatenated dataset width",
            });
        }
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.labels.extend_from_slice(&other.labels);
        out.sensitive.extend_from_slice(&other.sensitive);
        Ok(out)
    }
}

/// Fairness penalty attached to a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regularizer {
    /// Penalizes a low positive rate on the protected group.
    #[serde(rename = "dp")]
    DemographicParity,
    /// Penalizes a low true-positive rate on the protected group.
    #[serde(rename = "eop")]
    EqualOpportunity,
}

impl Regularizer {
    /// Whether a row with label `y` and sensitive attribute `a` enters the
    /// penalty's average.
    pub fn applies(self, y: u8, a: u8) -> bool {
        match self {
            Regularizer::DemographicParity => a == 0,
            Regularizer::EqualOpportunity => a == 0 && y == 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regularizer::DemographicParity => "dp",
            Regularizer::EqualOpportunity => "eop",
        }
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(Regularizer::DemographicParity),
            "eop" => Ok(Regularizer::EqualOpportunity),
            other => Err(Error::InvalidConfig(format!(
                "unknown regularizer `{other}` (expected dp or eop)"
            ))),
        }
    }
}

/// Task loss. Only binary cross-entropy is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Loss {
    #[default]
    #[serde(rename = "cross-entropy")]
    CrossEntropy,
}

/// A task: data, loss, fairness regularizer and its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub data: Dataset,
    pub loss: Loss,
    pub regularizer: Regularizer,
    pub gamma: f64,
}

impl Task {
    pub fn new(data: Dataset, regularizer: Regularizer, gamma: f64) -> Self {
        Task {
            data,
            loss: Loss::CrossEntropy,
            regularizer,
            gamma,
        }
    }
}
