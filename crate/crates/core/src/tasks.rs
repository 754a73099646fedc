//! Task distributions, K-shot support/query sampling and the on-disk task cache.
//!
//! # Cache format
//!
//! Line-oriented UTF-8 text. Numbers use Rust's shortest round-trip float
//! formatting, so a save/load cycle is bit-exact.
//!
//! ```text
//! fairmaml-task-cache 1
//! kind synthetic-train
//! count <tasks>
//! task <index> rows <n> dim <d> reg <dp|eop> gamma <γ> tag <tag|-> [slope <s> phi <φ> seed <u64>]
//! <x_1> … <x_d> <y> <a>        (n lines)
//! …
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Regularizer, Task};
use crate::error::{Error, Result};
use crate::synth::SyntheticTaskSpec;

const MAGIC: &str = "fairmaml-task-cache";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionKind {
    SyntheticTrain,
    SyntheticFinetune,
    CcTrain,
    CcHoldout,
}

impl DistributionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DistributionKind::SyntheticTrain => "synthetic-train",
            DistributionKind::SyntheticFinetune => "synthetic-finetune",
            DistributionKind::CcTrain => "cc-train",
            DistributionKind::CcHoldout => "cc-holdout",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            DistributionKind::SyntheticTrain,
            DistributionKind::SyntheticFinetune,
            DistributionKind::CcTrain,
            DistributionKind::CcHoldout,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

/// A finite pool of tasks sampled uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDistribution {
    kind: DistributionKind,
    tasks: Vec<Task>,
    specs: Vec<Option<SyntheticTaskSpec>>,
}

/// One task's contribution to a meta-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSample {
    pub task_index: usize,
    /// Rows for the inner adaptation step.
    pub support: Dataset,
    /// Fresh rows on which the adapted model is scored.
    pub query: Dataset,
    pub regularizer: Regularizer,
    pub gamma: f64,
}

impl TaskDistribution {
    pub fn new(kind: DistributionKind, tasks: Vec<Task>) -> Result<Self> {
        let specs = vec![None; tasks.len()];
        Self::with_specs(kind, tasks, specs)
    }

    pub fn with_specs(kind: DistributionKind, tasks: Vec<Task>, specs: Vec<Option<SyntheticTaskSpec>>) -> Result<Self> {
        let first = tasks
            .first()
            .ok_or_else(|| Error::InsufficientTasks("distribution has no tasks".into()))?;
        let dim = first.data.dim();
        if let Some(i) = tasks.iter().position(|t| t.data.dim() != dim) {
            return Err(Error::InvalidDataset(format!(
                "task {i} has {} features, task 0 has {dim}",
                tasks[i].data.dim()
            )));
        }
        if specs.len() != tasks.len() {
            return Err(Error::InvalidConfig("one spec slot per task required".into()));
        }
        Ok(TaskDistribution { kind, tasks, specs })
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn specs(&self) -> &[Option<SyntheticTaskSpec>] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.tasks[0].data.dim()
    }

    /// Same tasks with every task's regularizer and weight replaced.
    pub fn with_fairness(&self, regularizer: Regularizer, gamma: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.tasks {
            t.regularizer = regularizer;
            t.gamma = gamma;
        }
        out
    }

    /// `meta_batch` tasks (distinct when the pool is large enough), each with
    /// a `k`-row support set and `k` fresh query rows.
    pub fn sample_batch<R: Rng + ?Sized>(&self, meta_batch: usize, k: usize, rng: &mut R) -> Result<Vec<TaskSample>> {
        let picks: Vec<usize> = if meta_batch <= self.len() {
            index::sample(rng, self.len(), meta_batch).into_vec()
        } else {
            (0..meta_batch).map(|_| rng.random_range(0..self.len())).collect()
        };
        picks
            .into_iter()
            .map(|i| {
                let task = &self.tasks[i];
                let (support, query) = support_query_split(&task.data, k, rng)?;
                Ok(TaskSample {
                    task_index: i,
                    support,
                    query,
                    regularizer: task.regularizer,
                    gamma: task.gamma,
                })
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_cache_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_cache_str(&text, path)
    }

    pub fn to_cache_string(&self) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {VERSION}");
        let _ = writeln!(out, "kind {}", self.kind.as_str());
        let _ = writeln!(out, "count {}", self.tasks.len());
        for (i, (task, spec)) in self.tasks.iter().zip(&self.specs).enumerate() {
            let d = &task.data;
            let tag = d.tag().unwrap_or("-");
            if tag.is_empty() || tag.chars().any(char::is_whitespace) {
                return Err(Error::InvalidDataset(format!(
                    "task tag `{tag}` cannot be cached (empty or contains whitespace)"
                )));
            }
            let _ = write!(
                out,
                "task {i} rows {} dim {} reg {} gamma {} tag {tag}",
                d.len(),
                d.dim(),
                task.regularizer,
                task.gamma
            );
            if let Some(s) = spec {
                let _ = write!(out, " slope {} phi {} seed {}", s.slope, s.phi, s.seed);
            }
            out.push('\n');
            for r in 0..d.len() {
                for v in d.row(r) {
                    let _ = write!(out, "{v} ");
                }
                let _ = writeln!(out, "{} {}", d.labels()[r], d.sensitive()[r]);
            }
        }
        Ok(out)
    }

    pub fn from_cache_str(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")))
        };

        let (ln, header) = next("header")?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(err(ln, "not a task cache file".into()));
        }
        match parts.next().map(str::parse::<u32>) {
            Some(Ok(VERSION)) => {}
            _ => return Err(err(ln, format!("unsupported cache version (expected {VERSION})"))),
        }

        let (ln, kind_line) = next("kind")?;
        let kind = kind_line
            .strip_prefix("kind ")
            .and_then(DistributionKind::parse)
            .ok_or_else(|| err(ln, format!("bad kind line `{kind_line}`")))?;

        let (ln, count_line) = next("count")?;
        let count: usize = count_line
            .strip_prefix("count ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| err(ln, format!("bad count line `{count_line}`")))?;

        let mut tasks = Vec::with_capacity(count);
        let mut specs = Vec::with_capacity(count);
        for expected in 0..count {
            let (ln, line) = next("task header")?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if !tokens.len().is_multiple_of(2) || tokens.first() != Some(&"task") {
                return Err(err(ln, format!("bad task header `{line}`")));
            }
            let field = |key: &str| -> Result<&str> {
                tokens
                    .chunks(2)
                    .find(|kv| kv[0] == key)
                    .map(|kv| kv[1])
                    .ok_or_else(|| err(ln, format!("task header missing `{key}`")))
            };
            let num =
                |key: &str| -> Result<f64> { field(key)?.parse::<f64>().map_err(|e| err(ln, format!("`{key}`: {e}"))) };
            let int =
                |key: &str| -> Result<u64> { field(key)?.parse::<u64>().map_err(|e| err(ln, format!("`{key}`: {e}"))) };
            if int("task")? != expected as u64 {
                return Err(err(ln, format!("expected task {expected}")));
            }
            let rows = int("rows")? as usize;
            let dim = int("dim")? as usize;
            let reg: Regularizer = field("reg")?.parse().map_err(|e: Error| err(ln, e.to_string()))?;
            let gamma = num("gamma")?;
            let tag = field("tag")?;
            let spec = if tokens.contains(&"slope") {
                Some(SyntheticTaskSpec {
                    slope: num("slope")?,
                    phi: num("phi")?,
                    seed: int("seed")?,
                })
            } else {
                None
            };

            let mut features = Vec::with_capacity(rows * dim);
            let mut labels = Vec::with_capacity(rows);
            let mut sensitive = Vec::with_capacity(rows);
            for _ in 0..rows {
                let (ln, row) = next("data row")?;
                let vals: Vec<&str> = row.split_whitespace().collect();
                if vals.len() != dim + 2 {
                    return Err(err(ln, format!("expected {} fields, found {}", dim + 2, vals.len())));
                }
                for v in &vals[..dim] {
                    features.push(v.parse::<f64>().map_err(|e| err(ln, format!("{e}")))?);
                }
                labels.push(vals[dim].parse::<u8>().map_err(|e| err(ln, format!("{e}")))?);
                sensitive.push(vals[dim + 1].parse::<u8>().map_err(|e| err(ln, format!("{e}")))?);
            }
            let mut data = Dataset::new(features, dim, labels, sensitive).map_err(|e| err(ln, e.to_string()))?;
            if tag != "-" {
                data = data.with_tag(tag);
            }
            tasks.push(Task::new(data, reg, gamma));
            specs.push(spec);
        }
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(err(ln, format!("trailing content `{extra}`")));
        }
        TaskDistribution::with_specs(kind, tasks, specs)
    }
}

/// Disjoint `k`-row support and query sets when the data has at least `2k`
/// rows. Otherwise the support set takes `k` distinct rows (all rows, with
/// repeats, if fewer than `k` exist) and the query set is drawn with
/// replacement from the remaining rows.
pub fn support_query_split<R: Rng + ?Sized>(data: &Dataset, k: usize, rng: &mut R) -> Result<(Dataset, Dataset)> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    let n = data.len();
    if n >= 2 * k {
        let idx = index::sample(rng, n, 2 * k).into_vec();
        return Ok((data.select(&idx[..k])?, data.select(&idx[k..])?));
    }
    let (support_idx, rest): (Vec<usize>, Vec<usize>) = if n >= k {
        let perm = index::sample(rng, n, n).into_vec();
        (perm[..k].to_vec(), perm[k..].to_vec())
    } else {
        ((0..k).map(|_| rng.random_range(0..n)).collect(), Vec::new())
    };
    let pool: Vec<usize> = if rest.is_empty() { (0..n).collect() } else { rest };
    let query_idx: Vec<usize> = (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    Ok((data.select(&support_idx)?, data.select(&query_idx)?))
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn indexed(n: usize) -> Dataset {
        // feature value identifies the row
        Dataset::new(
            (0..n).map(|i| i as f64).collect(),
            1,
            (0..n).map(|i| (i % 2) as u8).collect(),
            (0..n).map(|i| ((i / 2) % 2) as u8).collect(),
        )
        .unwrap()
    }

    fn ids(d: &Dataset) -> Vec<usize> {
        d.features().iter().map(|&v| v as usize).collect()
    }

    #[test]
    fn split_is_disjoint_when_possible() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = indexed(20);
        let (s, q) = support_query_split(&d, 10, &mut rng).unwrap();
        let mut all: Vec<usize> = ids(&s).into_iter().chain(ids(&q)).collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn split_falls_back_to_replacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = indexed(14);
        let (s, q) = support_query_split(&d, 10, &mut rng).unwrap();
        assert_eq!((s.len(), q.len()), (10, 10));
        let s_ids = ids(&s);
        assert!(ids(&q).iter().all(|i| !s_ids.contains(i)));

        let d = indexed(3);
        let (s, q) = support_query_split(&d, 5, &mut rng).unwrap();
        assert_eq!((s.len(), q.len()), (5, 5));
    }

    #[test]
    fn batch_sampling_is_deterministic() {
        let tasks: Vec<Task> = (0..12)
            .map(|_| Task::new(indexed(30), Regularizer::DemographicParity, 1.0))
            .collect();
        let dist = TaskDistribution::new(DistributionKind::CcTrain, tasks).unwrap();
        let a = dist.sample_batch(8, 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = dist.sample_batch(8, 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        let mut picked: Vec<usize> = a.iter().map(|s| s.task_index).collect();
        picked.sort_unstable();
        picked.dedup();
        assert_eq!(picked.len(), 8);
        assert!(a.iter().all(|s| s.support.len() == 10 && s.query.len() == 10));
    }

    #[test]
    fn cache_rejects_garbage() {
        let p = PathBuf::from("mem");
        assert!(TaskDistribution::from_cache_str("", &p).is_err());
        assert!(TaskDistribution::from_cache_str("fairmaml-task-cache 2\n", &p).is_err());
        let truncated =
            "fairmaml-task-cache 1\nkind cc-train\ncount 1\ntask 0 rows 2 dim 1 reg dp gamma 0 tag -\n0.5 1 0\n";
        assert!(TaskDistribution::from_cache_str(truncated, &p).is_err());
        let bad_width =
            "fairmaml-task-cache 1\nkind cc-train\ncount 1\ntask 0 rows 1 dim 2 reg dp gamma 0 tag -\n0.5 1 0\n";
        assert!(matches!(
            TaskDistribution::from_cache_str(bad_width, &p),
            Err(Error::Parse { line: 5, .. })
        ));
    }

    #[test]
    fn cache_roundtrip_with_specs() {
        let t = Task::new(
            Dataset::new(vec![0.1, -2.5e-7, 1.0 / 3.0, 7.0], 2, vec![1, 0], vec![0, 1])
                .unwrap()
                .with_tag("synth-0"),
            Regularizer::EqualOpportunity,
            0.3,
        );
        let spec = SyntheticTaskSpec {
            slope: -4.25,
            phi: 16.0,
            seed: u64::MAX,
        };
        let dist = TaskDistribution::with_specs(DistributionKind::SyntheticTrain, vec![t], vec![Some(spec)]).unwrap();
        let text = dist.to_cache_string().unwrap();
        let back = TaskDistribution::from_cache_str(&text, Path::new("mem")).unwrap();
        assert_eq!(back, dist);
    }
}
