//! Synthetic fair-classification tasks built from two 2-D Gaussians.
//!
//! Training tasks label a point positive when it lies strictly above a line
//! through the origin with a random slope. The sensitive attribute is drawn
//! per point with `P(a=0) = N1(x') / (N1(x') + N2(x'))`, where `x'` is the
//! point rotated by an angle derived from `phi` and `N1`, `N2` are the two
//! Gaussian densities. Smaller rotations tie `a` more tightly to the
//! Gaussian a point came from.
//!
//! The biased fine-tuning task labels points by the Gaussian that generated
//! them, so no line through the origin separates the classes, and offers only
//! protected, positively labelled examples for adaptation.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Regularizer, Task};
use crate::error::{Error, Result};

pub const PHI_CHOICES: [f64; 4] = [2.0, 4.0, 8.0, 16.0];
pub const SLOPE_LIMIT: f64 = 5.0;

/// Bivariate normal with a precomputed Cholesky factor and inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2 {
    mean: [f64; 2],
    chol: [[f64; 2]; 2],
    inv: [[f64; 2]; 2],
    log_norm: f64,
}

impl Gaussian2 {
    pub fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        if cov[0][1] != cov[1][0] || cov[0][0] <= 0.0 || det <= 0.0 {
            return Err(Error::InvalidConfig("covariance is not positive definite".into()));
        }
        let l00 = cov[0][0].sqrt();
        let l10 = cov[1][0] / l00;
        let l11 = (cov[1][1] - l10 * l10).sqrt();
        Ok(Gaussian2 {
            mean,
            chol: [[l00, 0.0], [l10, l11]],
            inv: [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]],
            log_norm: -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        [
            self.mean[0] + self.chol[0][0] * z0,
            self.mean[1] + self.chol[1][0] * z0 + self.chol[1][1] * z1,
        ]
    }

    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        let q = d[0] * (self.inv[0][0] * d[0] + self.inv[0][1] * d[1])
            + d[1] * (self.inv[1][0] * d[0] + self.inv[1][1] * d[1]);
        self.log_norm - 0.5 * q
    }

    pub fn density(&self, x: [f64; 2]) -> f64 {
        self.log_density(x).exp()
    }
}

/// Distribution (1): `N([2, 2], [[5, 1], [1, 5]])`.
pub fn first_gaussian() -> Gaussian2 {
    Gaussian2::new([2.0, 2.0], [[5.0, 1.0], [1.0, 5.0]]).expect("valid covariance")
}

/// Distribution (2): `N([-2, -2], [[10, 1], [1, 3]])`.
pub fn second_gaussian() -> Gaussian2 {
    Gaussian2::new([-2.0, -2.0], [[10.0, 1.0], [1.0, 3.0]]).expect("valid covariance")
}

/// How `phi` becomes a rotation angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiInterpretation {
    /// Rotate by `phi` radians.
    #[default]
    Literal,
    /// Rotate by `π / phi` radians.
    PiOverPhi,
}

impl PhiInterpretation {
    pub fn angle(self, phi: f64) -> f64 {
        match self {
            PhiInterpretation::Literal => phi,
            PhiInterpretation::PiOverPhi => std::f64::consts::PI / phi,
        }
    }
}

impl std::str::FromStr for PhiInterpretation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(PhiInterpretation::Literal),
            "pi-over-phi" => Ok(PhiInterpretation::PiOverPhi),
            other => Err(Error::InvalidConfig(format!(
                "unknown phi interpretation `{other}` (expected literal or pi-over-phi)"
            ))),
        }
    }
}

/// `[[cos, -sin], [sin, cos]] · x`.
pub fn rotate(x: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * x[0] - s * x[1], s * x[0] + c * x[1]]
}

/// `P(a = 0 | x)` for rotation `angle`.
pub fn protected_probability(x: [f64; 2], angle: f64) -> f64 {
    let xr = rotate(x, angle);
    let l1 = first_gaussian().log_density(xr);
    let l2 = second_gaussian().log_density(xr);
    // N1 / (N1 + N2) computed in log space
    1.0 / (1.0 + (l2 - l1).exp())
}

/// 1 iff `x` lies strictly above the line `x2 = slope · x1`.
pub fn line_label(x: [f64; 2], slope: f64) -> u8 {
    u8::from(x[1] > slope * x[0])
}

fn draw_sensitive<R: Rng + ?Sized>(x: [f64; 2], angle: f64, rng: &mut R) -> u8 {
    let p0 = protected_probability(x, angle);
    u8::from(rng.random::<f64>() >= p0)
}

fn draw_mixture<R: Rng + ?Sized>(rng: &mut R) -> ([f64; 2], bool) {
    let from_first = rng.random_bool(0.5);
    let g = if from_first {
        first_gaussian()
    } else {
        second_gaussian()
    };
    (g.sample(rng), from_first)
}

/// Parameters of one training task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub slope: f64,
    pub phi: f64,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn new(slope: f64, phi: f64, seed: u64) -> Result<Self> {
        if !(-SLOPE_LIMIT..=SLOPE_LIMIT).contains(&slope) {
            return Err(Error::InvalidConfig(format!("slope {slope} outside [-5, 5]")));
        }
        if !PHI_CHOICES.contains(&phi) {
            return Err(Error::InvalidConfig(format!("phi {phi} not one of 2, 4, 8, 16")));
        }
        Ok(SyntheticTaskSpec { slope, phi, seed })
    }

    /// Slope uniform on `[-5, 5]`, `phi` uniform over [`PHI_CHOICES`].
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        SyntheticTaskSpec {
            slope: rng.random_range(-SLOPE_LIMIT..=SLOPE_LIMIT),
            phi: *PHI_CHOICES.choose(rng).expect("non-empty"),
            seed: rng.next_u64(),
        }
    }
}

/// `n` points from the equal-weight mixture, labelled by the task's line.
pub fn sample_train_dataset(spec: &SyntheticTaskSpec, n: usize, interp: PhiInterpretation) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("task size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let angle = interp.angle(spec.phi);
    let mut features = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let mut sensitive = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, _) = draw_mixture(&mut rng);
        features.extend_from_slice(&x);
        labels.push(line_label(x, spec.slope));
        sensitive.push(draw_sensitive(x, angle, &mut rng));
    }
    Dataset::new(features, 2, labels, sensitive)
}

pub fn sample_train_task(
    spec: &SyntheticTaskSpec,
    n: usize,
    interp: PhiInterpretation,
    reg: Regularizer,
    gamma: f64,
) -> Result<Task> {
    Ok(Task::new(sample_train_dataset(spec, n, interp)?, reg, gamma))
}

/// `count` training tasks with specs drawn from `seed`.
pub fn generate_train_tasks(
    count: usize,
    task_size: usize,
    seed: u64,
    interp: PhiInterpretation,
    reg: Regularizer,
    gamma: f64,
) -> Result<Vec<(SyntheticTaskSpec, Task)>> {
    if count == 0 {
        return Err(Error::InvalidConfig("task count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let spec = SyntheticTaskSpec::random(&mut rng);
            let task = sample_train_task(&spec, task_size, interp, reg, gamma)?;
            Ok((
                spec,
                Task {
                    data: task.data.with_tag(format!("synth-{i}")),
                    ..task
                },
            ))
        })
        .collect()
}

/// The biased adaptation task: `k_protected_positive` rows, all with `y = 1`
/// and `a = 0`, plus an `n_eval`-row evaluation set from the full labelled
/// mixture. Labels follow the generating Gaussian (first → 1, second → 0).
pub fn sample_finetune_task(
    seed: u64,
    k_protected_positive: usize,
    n_eval: usize,
    interp: PhiInterpretation,
) -> Result<(Dataset, Dataset)> {
    if k_protected_positive == 0 || n_eval == 0 {
        return Err(Error::InvalidConfig(
            "fine-tune and evaluation sizes must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = *PHI_CHOICES.choose(&mut rng).expect("non-empty");
    let angle = interp.angle(phi);

    let positive = first_gaussian();
    let mut tune = Vec::with_capacity(2 * k_protected_positive);
    let mut found = 0;
    while found < k_protected_positive {
        let x = positive.sample(&mut rng);
        if draw_sensitive(x, angle, &mut rng) == 0 {
            tune.extend_from_slice(&x);
            found += 1;
        }
    }
    let tune =
        Dataset::new(tune, 2, vec![1; k_protected_positive], vec![0; k_protected_positive])?.with_tag("finetune");

    let mut features = Vec::with_capacity(2 * n_eval);
    let mut labels = Vec::with_capacity(n_eval);
    let mut sensitive = Vec::with_capacity(n_eval);
    for _ in 0..n_eval {
        let (x, from_first) = draw_mixture(&mut rng);
        features.extend_from_slice(&x);
        labels.push(u8::from(from_first));
        sensitive.push(draw_sensitive(x, angle, &mut rng));
    }
    let eval = Dataset::new(features, 2, labels, sensitive)?.with_tag("eval");
    Ok((tune, eval))
}
