//! Fairness-regularized model-agnostic meta-learning.
//!
//! The crate trains a small ReLU classifier so that a single gradient step on
//! a handful of examples from a new task yields a model that is both accurate
//! and fair with respect to a binary sensitive attribute. Meta-gradients are
//! exact: they differentiate through the inner gradient step using
//! Hessian-vector products.
//!
//! Modules:
//! - [`nn`]: network, objective, gradients, meta-gradients.
//! - [`fairness`]: parity metrics and the differentiable penalties.
//! - [`synth`]: the two-Gaussian synthetic task family.
//! - [`cc`]: Communities and Crime ingestion, one task per state.
//! - [`tasks`]: task distributions, K-shot sampling and the task cache format.
//! - [`train`]: meta-training, the pre-trained baseline, fine-tuning, Adam.
//! - [`experiment`]: γ sweeps and the synthetic and Communities and Crime drivers.
//! - [`boundary`]: decision-boundary grids for plotting.

pub mod boundary;
pub mod cc;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fairness;
pub mod nn;
pub mod synth;
pub mod tasks;
pub mod train;

pub use dataset::{Dataset, Loss, Regularizer, Task};
pub use error::{Error, Result};
