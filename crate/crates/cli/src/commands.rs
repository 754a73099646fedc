//! Subcommand implementations. Each returns the run directory or file it
//! wrote; everything printed is read back from what was written.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fairmaml::boundary::{export_boundary, GridSpec};
use fairmaml::experiment::{
    run_cc, run_synthetic, select_best, selection_score, write_combined, write_sweep, AggregateRow, MethodSweep,
    Selection,
};
use fairmaml::nn::MlpParams;
use fairmaml::tasks::TaskDistribution;
use fairmaml::{cc, Regularizer};
use serde::Serialize;

use crate::config::{ExperimentKind, RunConfig};
use crate::error::CliError;

/// `<out>/<experiment>-seed<first seed>-<unix seconds>`, with `-<n>` appended
/// if that directory already exists.
pub fn create_run_dir(out: &Path, kind: ExperimentKind, seeds: &[u64]) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let seed = seeds.first().copied().unwrap_or_default();
    let base = format!("{}-seed{seed}-{ts}", kind.as_str());
    let mut dir = out.join(&base);
    let mut n = 1;
    loop {
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                dir = out.join(format!("{base}-{n}"));
                n += 1;
            }
            Err(e) => return Err(CliError::io(&dir, e)),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_owned(), |v| v.to_string())
}

fn summary_line(label: &str, a: &AggregateRow) -> String {
    format!(
        "{label}: gamma={} accuracy={} dp_ratio_symmetric={} eo_ratio_symmetric={} (undefined dp/eo: {}/{})",
        a.gamma,
        a.accuracy,
        fmt_opt(a.dp_symmetric),
        fmt_opt(a.eo_symmetric),
        a.undefined_dp,
        a.undefined_eo
    )
}

fn selection_line(label: &str, s: &Selection) -> String {
    format!(
        "{label}: gamma={} finetune_lr={} accuracy={} dp_ratio_symmetric={}",
        s.gamma,
        s.finetune_lr,
        s.accuracy,
        fmt_opt(s.dp_symmetric)
    )
}

/// Regularizer stamped on cached Communities and Crime tasks.
fn cache_regularizer(cfg: &RunConfig) -> Regularizer {
    cfg.cc
        .regularizers
        .first()
        .copied()
        .unwrap_or(Regularizer::DemographicParity)
}

fn write_sweeps(dir: &Path, sweeps: &[MethodSweep]) -> Result<(), CliError> {
    write_combined(dir, sweeps)?;
    for s in sweeps {
        write_sweep(&dir.join(s.label()), s)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SynthSummary {
    fair_maml: Option<Selection>,
    pretrained: Option<Selection>,
}

/// Synthetic experiment: trains, fine-tunes on the biased task, writes
/// sweeps, selections and decision-boundary grids. Returns the run
/// directory and a printable summary.
pub fn cmd_synth(cfg: &RunConfig) -> Result<(PathBuf, String), CliError> {
    let settings = &cfg.synth;
    let outcome = run_synthetic(settings)?;
    let dir = create_run_dir(&cfg.out, ExperimentKind::Synth, &settings.seeds)?;
    write_json(&dir.join("manifest.json"), cfg)?;
    outcome.tasks.save(&dir.join("tasks.cache"))?;
    write_sweeps(&dir, &outcome.sweeps)?;

    let summary = SynthSummary {
        fair_maml: select_best(&[outcome.fair_maml()], selection_score),
        pretrained: select_best(&outcome.baselines(), selection_score),
    };
    write_json(&dir.join("summary.json"), &summary)?;

    let models = dir.join("models");
    std::fs::create_dir_all(&models).map_err(|e| CliError::io(&models, e))?;
    for m in &outcome.boundary_models {
        write_json(&models.join(format!("{}.json", m.name)), &m.params)?;
        export_boundary(&m.params, &cfg.boundary, &dir.join(format!("boundary_{}.csv", m.name)))?;
    }
    write_json(
        &models.join("index.json"),
        &outcome
            .boundary_models
            .iter()
            .map(
                |m| serde_json::json!({"name": m.name, "gamma": m.gamma, "seed": m.seed, "finetune_lr": m.finetune_lr}),
            )
            .collect::<Vec<_>>(),
    )?;

    let mut text = String::new();
    for (label, sel) in [("fair-maml", &summary.fair_maml), ("pretrained", &summary.pretrained)] {
        if let Some(s) = sel {
            let _ = writeln!(text, "{}", selection_line(label, s));
        }
    }
    let _ = write!(text, "wrote {}", dir.display());
    Ok((dir, text))
}

/// Communities and Crime experiment.
pub fn cmd_cc(cfg: &RunConfig) -> Result<(PathBuf, String), CliError> {
    let data_path = cc::require_file(&cfg.data)?;
    let data = cc::load_cc(&data_path)?;
    let outcome = run_cc(&data, &cfg.cc)?;
    let dir = create_run_dir(&cfg.out, ExperimentKind::Cc, &cfg.cc.seeds)?;
    write_json(&dir.join("manifest.json"), cfg)?;
    write_json(&dir.join("features.json"), &outcome.taskset.manifest)?;
    write_json(
        &dir.join("states.json"),
        &serde_json::json!({
            "train": outcome.taskset.train_states,
            "holdout": outcome.taskset.holdout_states,
        }),
    )?;
    let reg = cache_regularizer(cfg);
    outcome
        .taskset
        .train_distribution(reg, 0.0)?
        .save(&dir.join("tasks.cache"))?;
    outcome
        .taskset
        .holdout_distribution(reg, 0.0)?
        .save(&dir.join("holdout.cache"))?;
    write_sweeps(&dir, &outcome.sweeps)?;

    let mut text = format!(
        "{} train states, holdout states {:?}\n",
        outcome.taskset.train.len(),
        outcome.taskset.holdout_states
    );
    for s in &outcome.sweeps {
        for a in s.aggregate() {
            let _ = writeln!(text, "{}", summary_line(&s.label(), &a));
        }
    }
    let _ = write!(text, "wrote {}", dir.display());
    Ok((dir, text))
}

/// Writes the `x,y,p1` grid of a saved model.
pub fn cmd_boundary(model: &Path, grid: &GridSpec, out: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(model).map_err(|e| CliError::io(model, e))?;
    let params: MlpParams = serde_json::from_str(&text).map_err(|e| {
        CliError::Core(fairmaml::Error::Data {
            path: model.to_path_buf(),
            message: e.to_string(),
        })
    })?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let n = export_boundary(&params, grid, out)?;
    Ok(format!("wrote {n} grid points to {}", out.display()))
}

/// Writes the task pool(s) of an experiment to `<out>/tasks.cache`
/// (and `<out>/holdout.cache` for Communities and Crime).
pub fn cmd_cache_tasks(kind: ExperimentKind, cfg: &RunConfig) -> Result<String, CliError> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let path = cfg.out.join("tasks.cache");
    match kind {
        ExperimentKind::Synth => {
            let dist = cfg.synth.tasks()?;
            dist.save(&path)?;
            Ok(format!("wrote {} tasks to {}", dist.len(), path.display()))
        }
        ExperimentKind::Cc => {
            let data = cc::load_cc(&cc::require_file(&cfg.data)?)?;
            let set = cc::build_tasks(&data, cfg.cc.holdout_count, cfg.cc.holdout_seed)?;
            let reg = cache_regularizer(cfg);
            let train: TaskDistribution = set.train_distribution(reg, 0.0)?;
            train.save(&path)?;
            let holdout = cfg.out.join("holdout.cache");
            set.holdout_distribution(reg, 0.0)?.save(&holdout)?;
            Ok(format!(
                "wrote {} train tasks to {} and {} holdout tasks to {}",
                set.train.len(),
                path.display(),
                set.holdout.len(),
                holdout.display()
            ))
        }
    }
}
