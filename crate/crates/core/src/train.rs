//! Meta-training, the conventionally trained baseline, fine-tuning and Adam.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Regularizer};
use crate::error::{Error, Result};
use crate::nn::{self, Architecture, FlatGradient, MlpParams};
use crate::tasks::{TaskDistribution, TaskSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. [`Adam::step`] returns the update to subtract.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, grad: &FlatGradient, lr: f64) -> Result<FlatGradient> {
        if grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                actual: grad.len(),
                context: "Adam state",
            });
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let update = grad
            .values()
            .iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(&g, (m, v))| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                lr * (*m / c1) / ((*v / c2).sqrt() + eps)
            })
            .collect();
        Ok(FlatGradient::new(update))
    }
}

/// Hyperparameters shared by meta-training and the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    /// Inner (adaptation) step size.
    pub alpha: f64,
    /// Meta learning rate.
    pub beta: f64,
    /// Rows per support set and per query set.
    pub k: usize,
    pub meta_batch: usize,
    pub meta_iters: usize,
    pub inner_steps: usize,
    pub gamma: f64,
    pub regularizer: Regularizer,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Adam learning rate of the conventionally trained baseline.
    pub baseline_lr: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            alpha: 0.3,
            beta: 1e-3,
            k: 5,
            meta_batch: 32,
            meta_iters: 5000,
            inner_steps: 1,
            gamma: 0.0,
            regularizer: Regularizer::DemographicParity,
            seed: 0,
            adam: AdamConfig::default(),
            baseline_lr: 1e-3,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.baseline_lr > 0.0 && self.baseline_lr.is_finite()) {
            return bad("baseline_lr must be positive");
        }
        if self.k == 0 || self.meta_batch == 0 || self.inner_steps == 0 {
            return bad("k, meta_batch and inner_steps must be at least 1");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be finite and non-negative");
        }
        let a = self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("Adam needs beta1, beta2 in [0, 1) and eps > 0");
        }
        Ok(())
    }
}

/// Where meta-batches come from.
pub trait BatchSource: Sync {
    fn input_dim(&self) -> usize;
    /// Batch for `iteration`. Implementations that sample must draw only
    /// from `rng`.
    fn batch(&self, iteration: usize, meta_batch: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TaskSample>>;
}

impl BatchSource for TaskDistribution {
    fn input_dim(&self) -> usize {
        TaskDistribution::input_dim(self)
    }

    fn batch(&self, _: usize, meta_batch: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TaskSample>> {
        self.sample_batch(meta_batch, k, rng)
    }
}

/// A fixed list of pre-sampled meta-batches, cycled through in order.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedBatches {
    batches: Vec<Vec<TaskSample>>,
    input_dim: usize,
}

impl CachedBatches {
    pub fn sample(dist: &TaskDistribution, count: usize, meta_batch: usize, k: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidConfig("need at least one cached batch".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches = (0..count)
            .map(|_| dist.sample_batch(meta_batch, k, &mut rng))
            .collect::<Result<_>>()?;
        Ok(CachedBatches {
            batches,
            input_dim: dist.input_dim(),
        })
    }

    pub fn from_batches(batches: Vec<Vec<TaskSample>>, input_dim: usize) -> Result<Self> {
        if batches.is_empty() || batches.iter().any(Vec::is_empty) {
            return Err(Error::InvalidConfig("cached batches must be non-empty".into()));
        }
        Ok(CachedBatches { batches, input_dim })
    }

    pub fn batches(&self) -> &[Vec<TaskSample>] {
        &self.batches
    }
}

impl BatchSource for CachedBatches {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn batch(&self, iteration: usize, meta_batch: usize, k: usize, _: &mut ChaCha8Rng) -> Result<Vec<TaskSample>> {
        let b = &self.batches[iteration % self.batches.len()];
        if b.len() != meta_batch || b.iter().any(|s| s.support.len() != k) {
            return Err(Error::InvalidConfig(format!(
                "cached batches hold {} tasks of {} rows, config asks for {meta_batch} of {k}",
                b.len(),
                b.first().map_or(0, |s| s.support.len())
            )));
        }
        Ok(b.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FairMaml,
    Pretrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: Method,
    /// Fair-MAML: summed post-adaptation objective of each meta-batch.
    /// Baseline: summed pre-step objective of each batch.
    pub trace: Vec<f64>,
    pub params: MlpParams,
    pub wall_clock_secs: f64,
    pub config: MetaConfig,
    pub seed: u64,
    pub tasks_seen: usize,
}

impl TrainReport {
    /// Equality ignoring wall-clock time.
    pub fn same_result(&self, other: &TrainReport) -> bool {
        self.method == other.method
            && self.trace == other.trace
            && self.params == other.params
            && self.config == other.config
            && self.tasks_seen == other.tasks_seen
    }
}

fn init(source: &dyn BatchSource, cfg: &MetaConfig) -> Result<(MlpParams, ChaCha8Rng)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = MlpParams::glorot_uniform(Architecture::two_hidden(source.input_dim())?, &mut rng);
    Ok((params, rng))
}

/// Fair-MAML. Every meta-iteration adapts to each task of a meta-batch with
/// one step on its support set, scores the adapted model on the query set,
/// and applies one Adam step along the sum of the exact meta-gradients.
///
/// Per-task work runs in parallel and is reduced with [`canonical_sum`], so
/// results depend neither on the thread count nor on the task order.
pub fn fair_maml_train(source: &dyn BatchSource, cfg: &MetaConfig) -> Result<TrainReport> {
    let start = Instant::now();
    let (mut params, mut rng) = init(source, cfg)?;
    let mut adam = Adam::new(params.len(), cfg.adam);
    let mut trace = Vec::with_capacity(cfg.meta_iters);
    for iteration in 0..cfg.meta_iters {
        let batch = source.batch(iteration, cfg.meta_batch, cfg.k, &mut rng)?;
        let steps = batch
            .par_iter()
            .map(|s| {
                nn::meta_step(
                    &params,
                    &s.support,
                    &s.query,
                    cfg.alpha,
                    cfg.inner_steps,
                    cfg.regularizer,
                    cfg.gamma,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let (grad, objective) = canonical_sum(params.len(), steps.iter().map(|s| (&s.gradient, s.adapted_objective)));
        if !objective.is_finite() || !grad.is_finite() {
            return Err(Error::NonFinite { iteration });
        }
        params = params.step(&adam.step(&grad, cfg.beta)?, 1.0)?;
        trace.push(objective);
    }
    Ok(TrainReport {
        method: Method::FairMaml,
        trace,
        params,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
        seed: cfg.seed,
        tasks_seen: cfg.meta_iters * cfg.meta_batch,
    })
}

/// Sum of per-task `(gradient, value)` pairs that does not depend on task
/// order: each coordinate's terms are sorted before adding, so permuting a
/// meta-batch gives a bit-identical result.
pub fn canonical_sum<'a>(len: usize, items: impl IntoIterator<Item = (&'a FlatGradient, f64)>) -> (FlatGradient, f64) {
    let items: Vec<(&FlatGradient, f64)> = items.into_iter().collect();
    let sorted_sum = |mut terms: Vec<f64>| {
        terms.sort_by(f64::total_cmp);
        terms.into_iter().sum::<f64>()
    };
    let grad = (0..len)
        .map(|c| sorted_sum(items.iter().map(|(g, _)| g.values()[c]).collect()))
        .collect();
    let value = sorted_sum(items.iter().map(|(_, v)| *v).collect());
    (FlatGradient::new(grad), value)
}

/// The conventionally trained baseline: the same batches as Fair-MAML, but
/// each task contributes one Adam step on the regularized objective of its
/// support set, with no adaptation.
pub fn pretrain_baseline(source: &dyn BatchSource, cfg: &MetaConfig) -> Result<TrainReport> {
    let start = Instant::now();
    let (mut params, mut rng) = init(source, cfg)?;
    let mut adam = Adam::new(params.len(), cfg.adam);
    let mut trace = Vec::with_capacity(cfg.meta_iters);
    let mut tasks_seen = 0;
    for iteration in 0..cfg.meta_iters {
        let batch = source.batch(iteration, cfg.meta_batch, cfg.k, &mut rng)?;
        let mut batch_objective = 0.0;
        for s in &batch {
            batch_objective += nn::objective(&params, &s.support, cfg.regularizer, cfg.gamma)?;
            let g = nn::grad_objective(&params, &s.support, cfg.regularizer, cfg.gamma)?;
            params = params.step(&adam.step(&g, cfg.baseline_lr)?, 1.0)?;
            tasks_seen += 1;
        }
        if !batch_objective.is_finite() || !params.is_finite() {
            return Err(Error::NonFinite { iteration });
        }
        trace.push(batch_objective);
    }
    Ok(TrainReport {
        method: Method::Pretrained,
        trace,
        params,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
        seed: cfg.seed,
        tasks_seen,
    })
}

/// `steps` plain gradient steps of size `lr` on the regularized objective.
pub fn fine_tune(
    params: &MlpParams,
    data: &Dataset,
    steps: usize,
    lr: f64,
    reg: Regularizer,
    gamma: f64,
) -> Result<MlpParams> {
    let mut out = params.clone();
    for _ in 0..steps {
        out = nn::inner_update(&out, data, lr, reg, gamma)?;
    }
    Ok(out)
}

/// Seed for sub-stream `stream` of `seed` (SplitMix64 finalizer), so that
/// related runs get well-separated generators.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
