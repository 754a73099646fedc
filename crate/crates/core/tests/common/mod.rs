//! Independent test oracles: central finite differences and a straight-line
//! forward pass used to keep random draws away from ReLU kinks.
#![allow(dead_code)]

use fairmaml::nn::{Architecture, MlpParams};
use fairmaml::Dataset;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const ABS_FLOOR: f64 = 1e-8;

pub fn central_differences(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = t[i];
            t[i] = orig + h;
            let up = f(&t);
            t[i] = orig - h;
            let down = f(&t);
            t[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest per-coordinate relative error; coordinates whose absolute error is
/// below `abs_floor` count as exact.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], abs_floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let diff = (a - n).abs();
            if diff <= abs_floor {
                0.0
            } else {
                diff / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Smallest |pre-activation| of any hidden unit over all rows, from a naive
/// forward pass. Finite differences are only meaningful when this is well
/// above the step size.
pub fn min_hidden_margin(params: &MlpParams, data: &Dataset) -> f64 {
    let layers = params.layers();
    let mut margin = f64::INFINITY;
    for r in 0..data.len() {
        let mut a = data.row(r).to_vec();
        for layer in &layers[..layers.len() - 1] {
            let z: Vec<f64> = (0..layer.n_out)
                .map(|o| {
                    layer.bias[o]
                        + (0..layer.n_in)
                            .map(|i| layer.weights[o * layer.n_in + i] * a[i])
                            .sum::<f64>()
                })
                .collect();
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            a = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    margin
}

pub fn random_params(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> MlpParams {
    let arch = Architecture::new(dims).unwrap();
    let mut p = MlpParams::glorot_uniform(arch.clone(), rng);
    // non-zero biases so every coordinate is exercised
    let mut values = p.values().to_vec();
    let mut offset = 0;
    for (n_in, n_out) in arch.layer_shapes() {
        offset += n_in * n_out;
        for b in &mut values[offset..offset + n_out] {
            *b = rng.random_range(-0.5..0.5);
        }
        offset += n_out;
    }
    p = MlpParams::from_flat(arch, values).unwrap();
    p
}

pub fn random_dataset(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Dataset {
    Dataset::new(
        (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
        dim,
        (0..n).map(|_| rng.random_range(0..2u8)).collect(),
        (0..n).map(|_| rng.random_range(0..2u8)).collect(),
    )
    .unwrap()
}

/// Random architecture no larger than `2 → 20 → 20 → 2`.
pub fn random_dims(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let input = rng.random_range(1..=2);
    let depth = rng.random_range(1..=2);
    let mut dims = vec![input];
    dims.extend((0..depth).map(|_| rng.random_range(2..=20)));
    dims.push(2);
    dims
}

/// Bivariate normal density written out from the closed form, independent
/// of the library's Cholesky-based implementation.
pub fn normal2_pdf(x: [f64; 2], mean: [f64; 2], cov: [[f64; 2]; 2]) -> f64 {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let (dx, dy) = (x[0] - mean[0], x[1] - mean[1]);
    let q = (cov[1][1] * dx * dx - 2.0 * cov[0][1] * dx * dy + cov[0][0] * dy * dy) / det;
    (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
}

/// `P(a = 0 | x)` for a rotation by `angle`, from [`normal2_pdf`].
pub fn oracle_protected_probability(x: [f64; 2], angle: f64) -> f64 {
    let (s, c) = angle.sin_cos();
    let xr = [c * x[0] - s * x[1], s * x[0] + c * x[1]];
    let n1 = normal2_pdf(xr, [2.0, 2.0], [[5.0, 1.0], [1.0, 5.0]]);
    let n2 = normal2_pdf(xr, [-2.0, -2.0], [[10.0, 1.0], [1.0, 3.0]]);
    assert!(n1 + n2 > 0.0, "densities underflow at {x:?}");
    n1 / (n1 + n2)
}

/// Goodness of fit of Bernoulli outcomes `observed[i] ∈ {0, 1}` against
/// per-point success probabilities `expected[i]`, pooled into `bins` equal
/// probability intervals. Returns `(statistic, degrees of freedom)`; under
/// the null the statistic is χ² with that many degrees of freedom.
pub fn bernoulli_chi_square(observed: &[u8], expected: &[f64], bins: usize) -> (f64, usize) {
    let mut obs = vec![0.0; bins];
    let mut mean = vec![0.0; bins];
    let mut var = vec![0.0; bins];
    for (&o, &p) in observed.iter().zip(expected) {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        obs[b] += f64::from(o);
        mean[b] += p;
        var[b] += p * (1.0 - p);
    }
    let mut stat = 0.0;
    let mut dof = 0;
    for b in 0..bins {
        if var[b] > 1e-9 {
            stat += (obs[b] - mean[b]).powi(2) / var[b];
            dof += 1;
        }
    }
    (stat, dof)
}
