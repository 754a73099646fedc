//! γ sweeps for the synthetic and Communities and Crime experiments.
//!
//! Every (γ, seed) pair trains from scratch, fine-tunes on each evaluation
//! task and records one [`SweepRow`] per task. Runs are independent and are
//! executed in parallel; results are always collected in grid order.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cc::{self, CcData, CcTaskSet};
use crate::dataset::{Dataset, Regularizer};
use crate::error::{Error, Result};
use crate::fairness::{evaluate, EvalMetrics, Ratio};
use crate::nn::MlpParams;
use crate::synth::{self, PhiInterpretation, SyntheticTaskSpec};
use crate::tasks::{DistributionKind, TaskDistribution};
use crate::train::{
    derive_seed, fair_maml_train, fine_tune, pretrain_baseline, BatchSource, CachedBatches, MetaConfig, Method,
};

// Sub-stream ids for `derive_seed`.
const STREAM_TRAIN: u64 = 1;
const STREAM_FINETUNE_TASK: u64 = 2;
const STREAM_BATCHES: u64 = 3;
const STREAM_SPLIT: u64 = 4;

pub const METRICS_HEADER: [&str; 9] = [
    "gamma",
    "seed",
    "task_id",
    "accuracy",
    "dp_ratio",
    "eo_ratio",
    "n_eval",
    "undefined_dp",
    "undefined_eo",
];

/// Metrics of one fine-tuned model on one evaluation task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub seed: u64,
    pub task_id: String,
    pub metrics: EvalMetrics,
}

/// All rows for one method, regularizer and fine-tuning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSweep {
    pub method: Method,
    pub regularizer: Regularizer,
    pub finetune_lr: f64,
    pub rows: Vec<SweepRow>,
}

impl MethodSweep {
    /// Directory-friendly name, e.g. `fair-maml-dp` or `pretrained-dp-lr0.1`.
    pub fn label(&self) -> String {
        match self.method {
            Method::FairMaml => format!("{}-{}", self.method_name(), self.regularizer),
            Method::Pretrained => format!("{}-{}-lr{}", self.method_name(), self.regularizer, self.finetune_lr),
        }
    }

    pub fn method_name(&self) -> &'static str {
        match self.method {
            Method::FairMaml => "fair-maml",
            Method::Pretrained => "pretrained",
        }
    }

    pub fn aggregate(&self) -> Vec<AggregateRow> {
        aggregate(&self.rows)
    }
}

/// Means over all rows sharing a γ. Undefined ratios are left out of the
/// means and counted instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub gamma: f64,
    pub rows: usize,
    pub accuracy: f64,
    pub dp_ratio: Option<f64>,
    pub eo_ratio: Option<f64>,
    /// Mean of `min(r, 1/r)`.
    pub dp_symmetric: Option<f64>,
    pub eo_symmetric: Option<f64>,
    pub undefined_dp: usize,
    pub undefined_eo: usize,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut undefined) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => undefined += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), undefined)
}

/// One row per distinct γ, in order of first appearance.
pub fn aggregate(rows: &[SweepRow]) -> Vec<AggregateRow> {
    let mut gammas: Vec<f64> = Vec::new();
    for r in rows {
        if !gammas.contains(&r.gamma) {
            gammas.push(r.gamma);
        }
    }
    gammas
        .into_iter()
        .map(|gamma| {
            let group: Vec<&EvalMetrics> = rows.iter().filter(|r| r.gamma == gamma).map(|r| &r.metrics).collect();
            let (dp_ratio, undefined_dp) = mean_defined(group.iter().map(|m| m.dp_ratio.value()));
            let (eo_ratio, undefined_eo) = mean_defined(group.iter().map(|m| m.eo_ratio.value()));
            AggregateRow {
                gamma,
                rows: group.len(),
                accuracy: group.iter().map(|m| m.accuracy).sum::<f64>() / group.len() as f64,
                dp_ratio,
                eo_ratio,
                dp_symmetric: mean_defined(group.iter().map(|m| m.dp_ratio.symmetric())).0,
                eo_symmetric: mean_defined(group.iter().map(|m| m.eo_ratio.symmetric())).0,
                undefined_dp,
                undefined_eo,
            }
        })
        .collect()
}

fn fmt_ratio(r: Ratio) -> String {
    r.value().map_or_else(String::new, |v| v.to_string())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Per-task rows. Undefined ratios are written as empty fields.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[SweepRow], prefix: &[(&str, String)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = prefix.iter().map(|(k, _)| *k).collect();
    header.extend(METRICS_HEADER);
    w.write_record(&header)?;
    for r in rows {
        let m = &r.metrics;
        let mut rec: Vec<String> = prefix.iter().map(|(_, v)| v.clone()).collect();
        rec.extend([
            r.gamma.to_string(),
            r.seed.to_string(),
            r.task_id.clone(),
            m.accuracy.to_string(),
            fmt_ratio(m.dp_ratio),
            fmt_ratio(m.eo_ratio),
            m.n.to_string(),
            u8::from(!m.dp_ratio.is_defined()).to_string(),
            u8::from(!m.eo_ratio.is_defined()).to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub const AGGREGATE_HEADER: [&str; 9] = [
    "gamma",
    "rows",
    "accuracy",
    "dp_ratio",
    "eo_ratio",
    "dp_ratio_symmetric",
    "eo_ratio_symmetric",
    "undefined_dp",
    "undefined_eo",
];

pub fn write_aggregate_csv<W: Write>(out: W, rows: &[AggregateRow], prefix: &[(&str, String)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = prefix.iter().map(|(k, _)| *k).collect();
    header.extend(AGGREGATE_HEADER);
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = prefix.iter().map(|(_, v)| v.clone()).collect();
        rec.extend([
            r.gamma.to_string(),
            r.rows.to_string(),
            r.accuracy.to_string(),
            fmt_opt(r.dp_ratio),
            fmt_opt(r.eo_ratio),
            fmt_opt(r.dp_symmetric),
            fmt_opt(r.eo_symmetric),
            r.undefined_dp.to_string(),
            r.undefined_eo.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `metrics.csv` and `aggregate.csv` for one sweep into `dir`.
pub fn write_sweep(dir: &Path, sweep: &MethodSweep) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, is_metrics) in [("metrics.csv", true), ("aggregate.csv", false)] {
        let path = dir.join(name);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let res = if is_metrics {
            write_metrics_csv(file, &sweep.rows, &[])
        } else {
            write_aggregate_csv(file, &sweep.aggregate(), &[])
        };
        res.map_err(|e| csv_err(&path, e))?;
    }
    Ok(())
}

/// Writes every sweep into one pair of combined CSVs with leading
/// `method,regularizer,finetune_lr` columns.
pub fn write_combined(dir: &Path, sweeps: &[MethodSweep]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut metrics = Vec::new();
    let mut agg = Vec::new();
    for (i, s) in sweeps.iter().enumerate() {
        let prefix = [
            ("method", s.method_name().to_owned()),
            ("regularizer", s.regularizer.to_string()),
            ("finetune_lr", s.finetune_lr.to_string()),
        ];
        let mut m = Vec::new();
        let mut a = Vec::new();
        write_metrics_csv(&mut m, &s.rows, &prefix).map_err(|e| csv_err(dir, e))?;
        write_aggregate_csv(&mut a, &s.aggregate(), &prefix).map_err(|e| csv_err(dir, e))?;
        // keep the header only from the first sweep
        let skip = |buf: Vec<u8>| -> Vec<u8> {
            if i == 0 {
                buf
            } else {
                let cut = buf.iter().position(|&b| b == b'\n').map_or(buf.len(), |p| p + 1);
                buf[cut..].to_vec()
            }
        };
        metrics.extend(skip(m));
        agg.extend(skip(a));
    }
    for (name, bytes) in [("metrics.csv", metrics), ("aggregate.csv", agg)] {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Spearman rank correlation with average ranks for ties. `None` for fewer
/// than two points or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn integer_grid(lo: u32, hi: u32, step: u32) -> Vec<f64> {
    (lo..=hi).step_by(step as usize).map(f64::from).collect()
}

fn check_grid(gammas: &[f64], seeds: &[u64]) -> Result<()> {
    if gammas.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("γ grid and seed list must be non-empty".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
        return Err(Error::InvalidConfig(format!("γ {g} must be finite and non-negative")));
    }
    Ok(())
}

fn evaluate_row(params: &MlpParams, data: &Dataset, gamma: f64, seed: u64, task_id: &str) -> Result<SweepRow> {
    Ok(SweepRow {
        gamma,
        seed,
        task_id: task_id.to_owned(),
        metrics: evaluate(params, data)?,
    })
}

/// Synthetic experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub meta: MetaConfig,
    pub seeds: Vec<u64>,
    /// Seed for the cached training tasks, shared by all runs.
    pub task_seed: u64,
    pub task_count: usize,
    pub task_size: usize,
    pub gammas: Vec<f64>,
    /// One-step fine-tuning rates tried for the baseline.
    pub baseline_finetune_lrs: Vec<f64>,
    pub finetune_k: usize,
    pub finetune_steps: usize,
    pub n_eval: usize,
    pub phi_interpretation: PhiInterpretation,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            meta: MetaConfig::default(),
            seeds: (0..10).collect(),
            task_seed: 0,
            task_count: 100,
            task_size: 100,
            gammas: integer_grid(0, 10, 1),
            baseline_finetune_lrs: vec![0.01, 0.1, 0.2, 0.3],
            finetune_k: 5,
            finetune_steps: 1,
            n_eval: 1000,
            phi_interpretation: PhiInterpretation::Literal,
        }
    }
}

impl SynthSettings {
    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        check_grid(&self.gammas, &self.seeds)?;
        if self.task_count == 0 || self.task_size == 0 || self.finetune_k == 0 || self.n_eval == 0 {
            return Err(Error::InvalidConfig(
                "task and evaluation sizes must be at least 1".into(),
            ));
        }
        if self.baseline_finetune_lrs.is_empty() || self.baseline_finetune_lrs.iter().any(|lr| lr.is_nan() || *lr < 0.0)
        {
            return Err(Error::InvalidConfig(
                "baseline fine-tuning rates must be non-empty and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// The cached training tasks.
    pub fn tasks(&self) -> Result<TaskDistribution> {
        let generated = synth::generate_train_tasks(
            self.task_count,
            self.task_size,
            self.task_seed,
            self.phi_interpretation,
            self.meta.regularizer,
            self.meta.gamma,
        )?;
        let (specs, tasks): (Vec<SyntheticTaskSpec>, Vec<_>) = generated.into_iter().unzip();
        TaskDistribution::with_specs(
            DistributionKind::SyntheticTrain,
            tasks,
            specs.into_iter().map(Some).collect(),
        )
    }

    /// Biased fine-tuning set and evaluation set for `seed`.
    pub fn finetune_task(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        synth::sample_finetune_task(
            derive_seed(seed, STREAM_FINETUNE_TASK),
            self.finetune_k,
            self.n_eval,
            self.phi_interpretation,
        )
    }

    fn run_config(&self, gamma: f64, seed: u64) -> MetaConfig {
        MetaConfig {
            gamma,
            seed: derive_seed(seed, STREAM_TRAIN),
            ..self.meta.clone()
        }
    }
}

/// A fine-tuned model kept for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedModel {
    pub name: String,
    pub gamma: f64,
    pub seed: u64,
    pub finetune_lr: f64,
    pub params: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutcome {
    /// Fair-MAML first, then one sweep per baseline fine-tuning rate.
    pub sweeps: Vec<MethodSweep>,
    /// Fine-tuned models of the first seed: the selected baseline, Fair-MAML
    /// at γ = 0 (plain MAML) and the selected Fair-MAML with γ > 0.
    pub boundary_models: Vec<NamedModel>,
    pub tasks: TaskDistribution,
}

/// Best configuration of one method under a scoring rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub method: Method,
    pub gamma: f64,
    pub finetune_lr: f64,
    pub accuracy: f64,
    pub dp_symmetric: Option<f64>,
    pub eo_symmetric: Option<f64>,
}

/// Default rule for picking a configuration: mean accuracy.
pub fn selection_score(row: &AggregateRow) -> f64 {
    row.accuracy
}

/// Alternative rule: mean accuracy plus mean symmetric dp ratio (an
/// undefined ratio scores zero). A constant classifier has a perfect ratio,
/// so this rule favours degenerate models when γ is large.
pub fn trade_off_score(row: &AggregateRow) -> f64 {
    row.accuracy + row.dp_symmetric.unwrap_or(0.0)
}

/// Highest-scoring (γ, rate) over `sweeps`, first one on ties.
pub fn select_best(sweeps: &[&MethodSweep], score: impl Fn(&AggregateRow) -> f64) -> Option<Selection> {
    let mut best: Option<(f64, Selection)> = None;
    for s in sweeps {
        for a in s.aggregate() {
            let v = score(&a);
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((
                    v,
                    Selection {
                        method: s.method,
                        gamma: a.gamma,
                        finetune_lr: s.finetune_lr,
                        accuracy: a.accuracy,
                        dp_symmetric: a.dp_symmetric,
                        eo_symmetric: a.eo_symmetric,
                    },
                ));
            }
        }
    }
    best.map(|(_, s)| s)
}

impl SynthOutcome {
    pub fn fair_maml(&self) -> &MethodSweep {
        &self.sweeps[0]
    }

    pub fn baselines(&self) -> Vec<&MethodSweep> {
        self.sweeps.iter().filter(|s| s.method == Method::Pretrained).collect()
    }
}

/// Trains Fair-MAML and the baseline for every (γ, seed), fine-tunes both on
/// the biased task of that seed and evaluates on its evaluation set.
pub fn run_synthetic(settings: &SynthSettings) -> Result<SynthOutcome> {
    settings.validate()?;
    let tasks = settings.tasks()?;
    let reg = settings.meta.regularizer;
    let grid: Vec<(f64, u64)> = settings
        .gammas
        .iter()
        .flat_map(|&g| settings.seeds.iter().map(move |&s| (g, s)))
        .collect();

    struct RunResult {
        fair: (SweepRow, MlpParams),
        baseline: Vec<(SweepRow, MlpParams)>,
    }
    let results = grid
        .par_iter()
        .map(|&(gamma, seed)| -> Result<RunResult> {
            let cfg = settings.run_config(gamma, seed);
            let (tune, eval) = settings.finetune_task(seed)?;
            let fair = fair_maml_train(&tasks, &cfg)?;
            let adapted = fine_tune(&fair.params, &tune, settings.finetune_steps, cfg.alpha, reg, gamma)?;
            let fair_row = evaluate_row(&adapted, &eval, gamma, seed, "biased")?;

            let base = pretrain_baseline(&tasks, &cfg)?;
            let baseline = settings
                .baseline_finetune_lrs
                .iter()
                .map(|&lr| {
                    let p = fine_tune(&base.params, &tune, settings.finetune_steps, lr, reg, gamma)?;
                    Ok((evaluate_row(&p, &eval, gamma, seed, "biased")?, p))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RunResult {
                fair: (fair_row, adapted),
                baseline,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sweeps = vec![MethodSweep {
        method: Method::FairMaml,
        regularizer: reg,
        finetune_lr: settings.meta.alpha,
        rows: results.iter().map(|r| r.fair.0.clone()).collect(),
    }];
    for (i, &lr) in settings.baseline_finetune_lrs.iter().enumerate() {
        sweeps.push(MethodSweep {
            method: Method::Pretrained,
            regularizer: reg,
            finetune_lr: lr,
            rows: results.iter().map(|r| r.baseline[i].0.clone()).collect(),
        });
    }

    // Models for plotting, from the first seed.
    let first_seed = settings.seeds[0];
    let find = |gamma: f64| grid.iter().position(|&(g, s)| g == gamma && s == first_seed);
    let mut boundary_models = Vec::new();
    let baseline_refs: Vec<&MethodSweep> = sweeps[1..].iter().collect();
    if let Some(sel) = select_best(&baseline_refs, selection_score) {
        let lr_idx = settings
            .baseline_finetune_lrs
            .iter()
            .position(|&lr| lr == sel.finetune_lr);
        if let (Some(i), Some(j)) = (find(sel.gamma), lr_idx) {
            boundary_models.push(NamedModel {
                name: "pretrained".into(),
                gamma: sel.gamma,
                seed: first_seed,
                finetune_lr: sel.finetune_lr,
                params: results[i].baseline[j].1.clone(),
            });
        }
    }
    if let Some(i) = find(0.0) {
        boundary_models.push(NamedModel {
            name: "maml".into(),
            gamma: 0.0,
            seed: first_seed,
            finetune_lr: settings.meta.alpha,
            params: results[i].fair.1.clone(),
        });
    }
    let positive = MethodSweep {
        rows: sweeps[0].rows.iter().filter(|r| r.gamma > 0.0).cloned().collect(),
        ..sweeps[0].clone()
    };
    if let Some(sel) = select_best(&[&positive], selection_score) {
        if let Some(i) = find(sel.gamma) {
            boundary_models.push(NamedModel {
                name: "fairmaml".into(),
                gamma: sel.gamma,
                seed: first_seed,
                finetune_lr: settings.meta.alpha,
                params: results[i].fair.1.clone(),
            });
        }
    }

    Ok(SynthOutcome {
        sweeps,
        boundary_models,
        tasks,
    })
}

/// Communities and Crime experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcSettings {
    /// `gamma`, `regularizer` and `seed` are replaced per run.
    pub meta: MetaConfig,
    pub seeds: Vec<u64>,
    pub holdout_seed: u64,
    pub holdout_count: usize,
    pub cached_batches: usize,
    pub dp_gammas: Vec<f64>,
    pub eop_gammas: Vec<f64>,
    pub regularizers: Vec<Regularizer>,
    pub finetune_n: usize,
    pub finetune_steps: usize,
    pub baseline_finetune_lr: f64,
}

impl Default for CcSettings {
    fn default() -> Self {
        CcSettings {
            meta: MetaConfig {
                alpha: 1e-2,
                beta: 1e-4,
                k: 10,
                meta_batch: 8,
                meta_iters: 2000,
                ..MetaConfig::default()
            },
            seeds: vec![0, 1, 2],
            holdout_seed: 0,
            holdout_count: cc::DEFAULT_HOLDOUT,
            cached_batches: 100,
            dp_gammas: integer_grid(0, 4, 1),
            eop_gammas: integer_grid(0, 40, 10),
            regularizers: vec![Regularizer::DemographicParity, Regularizer::EqualOpportunity],
            finetune_n: cc::DEFAULT_FINETUNE_N,
            finetune_steps: 1,
            baseline_finetune_lr: 0.1,
        }
    }
}

impl CcSettings {
    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        check_grid(&self.dp_gammas, &self.seeds)?;
        check_grid(&self.eop_gammas, &self.seeds)?;
        if self.regularizers.is_empty() {
            return Err(Error::InvalidConfig("at least one regularizer is required".into()));
        }
        if self.cached_batches == 0 || self.finetune_n == 0 {
            return Err(Error::InvalidConfig(
                "cached_batches and finetune_n must be at least 1".into(),
            ));
        }
        if self.baseline_finetune_lr.is_nan() || self.baseline_finetune_lr < 0.0 {
            return Err(Error::InvalidConfig("baseline_finetune_lr must be non-negative".into()));
        }
        Ok(())
    }

    pub fn gammas(&self, reg: Regularizer) -> &[f64] {
        match reg {
            Regularizer::DemographicParity => &self.dp_gammas,
            Regularizer::EqualOpportunity => &self.eop_gammas,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcOutcome {
    pub taskset: CcTaskSet,
    /// For each regularizer: Fair-MAML, then the baseline.
    pub sweeps: Vec<MethodSweep>,
}

/// For each regularizer and (γ, seed): trains both methods on cached
/// meta-batches of training states, fine-tunes on `finetune_n` communities
/// of every held-out state and evaluates on the rest.
pub fn run_cc(data: &CcData, settings: &CcSettings) -> Result<CcOutcome> {
    settings.validate()?;
    let taskset = cc::build_tasks(data, settings.holdout_count, settings.holdout_seed)?;
    let mut sweeps = Vec::new();
    for &reg in &settings.regularizers {
        let train = taskset.train_distribution(reg, 0.0)?;
        let grid: Vec<(f64, u64)> = settings
            .gammas(reg)
            .iter()
            .flat_map(|&g| settings.seeds.iter().map(move |&s| (g, s)))
            .collect();
        let results = grid
            .par_iter()
            .map(|&(gamma, seed)| -> Result<(Vec<SweepRow>, Vec<SweepRow>)> {
                let cfg = MetaConfig {
                    gamma,
                    regularizer: reg,
                    seed: derive_seed(seed, STREAM_TRAIN),
                    ..settings.meta.clone()
                };
                let batches = CachedBatches::sample(
                    &train,
                    settings.cached_batches,
                    cfg.meta_batch,
                    cfg.k,
                    derive_seed(seed, STREAM_BATCHES),
                )?;
                let source: &dyn BatchSource = &batches;
                let fair = fair_maml_train(source, &cfg)?;
                let base = pretrain_baseline(source, &cfg)?;
                let mut fair_rows = Vec::new();
                let mut base_rows = Vec::new();
                for (i, state) in taskset.holdout.iter().enumerate() {
                    let split_seed = derive_seed(derive_seed(seed, STREAM_SPLIT), i as u64);
                    let (tune, eval) = cc::finetune_eval_split(state, settings.finetune_n, split_seed)?;
                    let id = state.tag().unwrap_or_default();
                    let p = fine_tune(&fair.params, &tune, settings.finetune_steps, cfg.alpha, reg, gamma)?;
                    fair_rows.push(evaluate_row(&p, &eval, gamma, seed, id)?);
                    let p = fine_tune(
                        &base.params,
                        &tune,
                        settings.finetune_steps,
                        settings.baseline_finetune_lr,
                        reg,
                        gamma,
                    )?;
                    base_rows.push(evaluate_row(&p, &eval, gamma, seed, id)?);
                }
                Ok((fair_rows, base_rows))
            })
            .collect::<Result<Vec<_>>>()?;
        let (fair, base): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        sweeps.push(MethodSweep {
            method: Method::FairMaml,
            regularizer: reg,
            finetune_lr: settings.meta.alpha,
            rows: fair.into_iter().flatten().collect(),
        });
        sweeps.push(MethodSweep {
            method: Method::Pretrained,
            regularizer: reg,
            finetune_lr: settings.baseline_finetune_lr,
            rows: base.into_iter().flatten().collect(),
        });
    }
    Ok(CcOutcome { taskset, sweeps })
}

/// Summary of how fairness and accuracy move along a γ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub gammas: Vec<f64>,
    pub fairness: Vec<Option<f64>>,
    pub accuracy: Vec<f64>,
    /// Spearman correlation of γ with the mean symmetric ratio.
    pub spearman: Option<f64>,
    pub accuracy_at_zero: Option<f64>,
    pub max_accuracy: f64,
}

/// Trend of the symmetric ratio matching `sweep`'s regularizer (dp ratio
/// for the dp penalty, eo ratio for the eop penalty).
pub fn trend(sweep: &MethodSweep) -> TrendCheck {
    let agg = sweep.aggregate();
    let fairness: Vec<Option<f64>> = agg
        .iter()
        .map(|a| match sweep.regularizer {
            Regularizer::DemographicParity => a.dp_symmetric,
            Regularizer::EqualOpportunity => a.eo_symmetric,
        })
        .collect();
    let gammas: Vec<f64> = agg.iter().map(|a| a.gamma).collect();
    let defined: Vec<(f64, f64)> = gammas
        .iter()
        .zip(&fairness)
        .filter_map(|(&g, f)| f.map(|f| (g, f)))
        .collect();
    let spearman = if defined.len() == gammas.len() {
        let (g, f): (Vec<f64>, Vec<f64>) = defined.into_iter().unzip();
        spearman(&g, &f)
    } else {
        None
    };
    TrendCheck {
        accuracy_at_zero: agg.iter().find(|a| a.gamma == 0.0).map(|a| a.accuracy),
        max_accuracy: agg.iter().map(|a| a.accuracy).fold(f64::NEG_INFINITY, f64::max),
        accuracy: agg.iter().map(|a| a.accuracy).collect(),
        gammas,
        fairness,
        spearman,
    }
}
