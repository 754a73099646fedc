//! Dense ReLU network with a two-way softmax head, the task objective
//! (cross-entropy plus a weighted fairness penalty), its gradient, and exact
//! gradients through one or more inner gradient steps.
//!
//! Second-order terms come from Hessian-vector products computed by running
//! the analytic backward pass on dual numbers; nothing here uses finite
//! differences.

mod backprop;
mod params;
mod scalar;

pub use params::{Architecture, FlatGradient, LayerView, MlpParams};
pub use scalar::{Dual, Scalar};

use crate::dataset::{Dataset, Regularizer};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]` before the log in
/// the cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

fn check_input(params: &MlpParams, dim: usize) -> Result<()> {
    let expected = params.architecture().input_dim();
    if dim != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: dim,
            context: "input features",
        });
    }
    Ok(())
}

fn check_step(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "step size must be finite and non-negative, got {alpha}"
        )));
    }
    Ok(())
}

/// `[P(f(x)=0), P(f(x)=1)]`.
pub fn forward(params: &MlpParams, x: &[f64]) -> Result<[f64; 2]> {
    check_input(params, x.len())?;
    let arch = params.architecture();
    let mut ws = backprop::Workspace::new(arch);
    Ok(backprop::forward(arch, params.values(), x, &mut ws))
}

/// `P(f(x)=1)` for every row of `data`.
pub fn positive_probabilities(params: &MlpParams, data: &Dataset) -> Result<Vec<f64>> {
    check_input(params, data.dim())?;
    let arch = params.architecture();
    let mut ws = backprop::Workspace::new(arch);
    Ok((0..data.len())
        .map(|i| backprop::forward(arch, params.values(), data.row(i), &mut ws)[1])
        .collect())
}

/// `-ln p_y` with `p_y` clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]`.
pub fn cross_entropy(probs: [f64; 2], y: u8) -> f64 {
    let p = if y == 1 { probs[1] } else { probs[0] };
    -p.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP).ln()
}

/// Mean cross-entropy over `data`.
pub fn batch_cross_entropy(params: &MlpParams, data: &Dataset) -> Result<f64> {
    objective(params, data, Regularizer::DemographicParity, 0.0)
}

/// `L(f_θ; D) + γ·R(f_θ; D)`.
pub fn objective(params: &MlpParams, data: &Dataset, reg: Regularizer, gamma: f64) -> Result<f64> {
    check_input(params, data.dim())?;
    Ok(backprop::objective(
        params.architecture(),
        params.values(),
        data,
        reg,
        gamma,
        None,
    ))
}

/// Exact gradient of [`objective`] with respect to every parameter.
pub fn grad_objective(params: &MlpParams, data: &Dataset, reg: Regularizer, gamma: f64) -> Result<FlatGradient> {
    check_input(params, data.dim())?;
    Ok(FlatGradient::new(
        TaskObjective::new(params.architecture(), data, reg, gamma).gradient(params.values()),
    ))
}

/// `H·v` where `H` is the Hessian of [`objective`] at `params`.
pub fn hessian_vector_product(
    params: &MlpParams,
    data: &Dataset,
    reg: Regularizer,
    gamma: f64,
    v: &FlatGradient,
) -> Result<FlatGradient> {
    check_input(params, data.dim())?;
    if v.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            actual: v.len(),
            context: "Hessian-vector product direction",
        });
    }
    Ok(FlatGradient::new(
        TaskObjective::new(params.architecture(), data, reg, gamma).hessian_vector_product(params.values(), v.values()),
    ))
}

/// `θ - α·∇_θ[L + γR](θ; D)`. The input is left untouched.
pub fn inner_update(params: &MlpParams, data: &Dataset, alpha: f64, reg: Regularizer, gamma: f64) -> Result<MlpParams> {
    check_step(alpha)?;
    let g = grad_objective(params, data, reg, gamma)?;
    params.step(&g, alpha)
}

/// Result of differentiating through the inner adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaStep {
    /// `∇_θ J(θ)` with `J(θ) = [L + γR](θ'(θ); D')`.
    pub gradient: FlatGradient,
    /// `J(θ)`, the post-adaptation objective on `D'`.
    pub adapted_objective: f64,
}

/// Exact gradient of the post-adaptation objective
/// `J(θ) = [L + γR](θ - α∇[L + γR](θ; D); D')`,
/// i.e. `(I - α·H(θ; D)) · ∇[L + γR](θ'; D')`.
pub fn meta_gradient(
    params: &MlpParams,
    support: &Dataset,
    query: &Dataset,
    alpha: f64,
    reg: Regularizer,
    gamma: f64,
) -> Result<FlatGradient> {
    Ok(meta_step(params, support, query, alpha, 1, reg, gamma)?.gradient)
}

/// [`meta_gradient`] generalized to `inner_steps` adaptation steps, also
/// returning the adapted objective value.
pub fn meta_step(
    params: &MlpParams,
    support: &Dataset,
    query: &Dataset,
    alpha: f64,
    inner_steps: usize,
    reg: Regularizer,
    gamma: f64,
) -> Result<MetaStep> {
    check_step(alpha)?;
    check_input(params, support.dim())?;
    check_input(params, query.dim())?;
    let arch = params.architecture();
    let inner = TaskObjective::new(arch, support, reg, gamma);
    let outer = TaskObjective::new(arch, query, reg, gamma);
    let (gradient, adapted_objective) =
        differentiate_through_steps(&inner, &outer, params.values(), alpha, inner_steps);
    Ok(MetaStep {
        gradient: FlatGradient::new(gradient),
        adapted_objective,
    })
}

/// A twice-differentiable scalar function of a flat parameter vector.
pub trait DifferentiableObjective {
    fn value(&self, theta: &[f64]) -> f64;
    fn gradient(&self, theta: &[f64]) -> Vec<f64>;
    fn hessian_vector_product(&self, theta: &[f64], v: &[f64]) -> Vec<f64>;
}

/// `θ - α·∇f(θ)`.
pub fn gradient_step<F: DifferentiableObjective + ?Sized>(f: &F, theta: &[f64], alpha: f64) -> Vec<f64> {
    let g = f.gradient(theta);
    theta.iter().zip(&g).map(|(t, g)| t - alpha * g).collect()
}

/// Gradient with respect to `θ₀` of `outer(θ_n)` where
/// `θ_{k+1} = θ_k - α·∇inner(θ_k)`, together with `outer(θ_n)`.
///
/// Reverse accumulation: `v ← ∇outer(θ_n)`, then for `k = n-1 … 0`,
/// `v ← v - α·H_inner(θ_k)·v`.
pub fn differentiate_through_steps<I, O>(
    inner: &I,
    outer: &O,
    theta: &[f64],
    alpha: f64,
    steps: usize,
) -> (Vec<f64>, f64)
where
    I: DifferentiableObjective + ?Sized,
    O: DifferentiableObjective + ?Sized,
{
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push(theta.to_vec());
    for _ in 0..steps {
        let next = gradient_step(inner, trajectory.last().unwrap(), alpha);
        trajectory.push(next);
    }
    let adapted = trajectory.pop().unwrap();
    let value = outer.value(&adapted);
    let mut v = outer.gradient(&adapted);
    for point in trajectory.iter().rev() {
        let hv = inner.hessian_vector_product(point, &v);
        for (vi, h) in v.iter_mut().zip(&hv) {
            *vi -= alpha * h;
        }
    }
    (v, value)
}

/// [`objective`] on a fixed dataset, as a function of the flat parameters.
#[derive(Debug, Clone, Copy)]
pub struct TaskObjective<'a> {
    arch: &'a Architecture,
    data: &'a Dataset,
    reg: Regularizer,
    gamma: f64,
}

impl<'a> TaskObjective<'a> {
    pub fn new(arch: &'a Architecture, data: &'a Dataset, reg: Regularizer, gamma: f64) -> Self {
        TaskObjective { arch, data, reg, gamma }
    }
}

impl DifferentiableObjective for TaskObjective<'_> {
    fn value(&self, theta: &[f64]) -> f64 {
        backprop::objective(self.arch, theta, self.data, self.reg, self.gamma, None)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        backprop::objective(self.arch, theta, self.data, self.reg, self.gamma, Some(&mut g));
        g
    }

    fn hessian_vector_product(&self, theta: &[f64], v: &[f64]) -> Vec<f64> {
        let seeded: Vec<Dual> = theta.iter().zip(v).map(|(&t, &d)| Dual::new(t, d)).collect();
        let mut g = vec![Dual::default(); theta.len()];
        backprop::objective(self.arch, &seeded, self.data, self.reg, self.gamma, Some(&mut g));
        g.into_iter().map(|d| d.eps).collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Straight-line forward pass written independently of `backprop`.
    fn naive_forward(params: &MlpParams, x: &[f64]) -> [f64; 2] {
        let layers = params.layers();
        let mut a = x.to_vec();
        for (l, layer) in layers.iter().enumerate() {
            let mut z = vec![0.0; layer.n_out];
            for o in 0..layer.n_out {
                let mut s = layer.bias[o];
                for i in 0..layer.n_in {
                    s += layer.weights[o * layer.n_in + i] * a[i];
                }
                z[o] = s;
            }
            if l + 1 < layers.len() {
                a = z.iter().map(|v| v.max(0.0)).collect();
            } else {
                a = z;
            }
        }
        let d = a[1] - a[0];
        let p1 = 1.0 / (1.0 + (-d).exp());
        [1.0 - p1, p1]
    }

    fn random_params(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> MlpParams {
        let arch = Architecture::new(dims).unwrap();
        let n = arch.num_params();
        MlpParams::from_flat(arch, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_dataset(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Dataset {
        Dataset::new(
            (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
            dim,
            (0..n).map(|_| rng.random_range(0..2u8)).collect(),
            (0..n).map(|_| rng.random_range(0..2u8)).collect(),
        )
        .unwrap()
    }

    struct HalfSquare;

    impl DifferentiableObjective for HalfSquare {
        fn value(&self, t: &[f64]) -> f64 {
            0.5 * t[0] * t[0]
        }
        fn gradient(&self, t: &[f64]) -> Vec<f64> {
            vec![t[0]]
        }
        fn hessian_vector_product(&self, _t: &[f64], v: &[f64]) -> Vec<f64> {
            vec![v[0]]
        }
    }

    #[test]
    fn zero_and_symmetric_params_give_uniform_probs() {
        let arch = Architecture::new(vec![3, 4, 2]).unwrap();
        let p = MlpParams::zeros(arch);
        assert_eq!(forward(&p, &[1.0, -2.0, 7.0]).unwrap(), [0.5, 0.5]);

        // identical rows in every layer: both logits coincide
        let p = MlpParams::from_layers(
            2,
            vec![
                (vec![0.3, -0.2, 0.3, -0.2], vec![0.1, 0.1]),
                (vec![0.5, 0.5, 0.5, 0.5], vec![-0.4, -0.4]),
            ],
        )
        .unwrap();
        assert_eq!(forward(&p, &[2.0, -1.0]).unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn forward_matches_naive_implementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p = random_params(vec![4, 6, 5, 2], &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let got = forward(&p, &x).unwrap();
            let want = naive_forward(&p, &x);
            assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
            assert!((got[0] + got[1] - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = MlpParams::zeros(Architecture::new(vec![3, 2]).unwrap());
        assert!(matches!(
            forward(&p, &[1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                actual: 2,
                ..
            })
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        assert!(cross_entropy([0.0, 1.0], 1) <= 1e-11);
        assert_eq!(cross_entropy([0.5, 0.5], 0), std::f64::consts::LN_2);
        assert_eq!(cross_entropy([0.5, 0.5], 1), std::f64::consts::LN_2);
        assert_eq!(cross_entropy([0.9, 0.1], 1), -(0.1f64.ln()));
        assert_eq!(cross_entropy([1.0, 0.0], 1), -(LOG_CLAMP.ln()));
    }

    #[test]
    fn objective_at_zero_gamma_is_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(vec![3, 4, 2], &mut rng);
        let d = random_dataset(9, 3, &mut rng);
        let o = objective(&p, &d, Regularizer::EqualOpportunity, 0.0).unwrap();
        let ce: f64 = (0..d.len())
            .map(|i| cross_entropy(forward(&p, d.row(i)).unwrap(), d.labels()[i]))
            .sum::<f64>()
            / d.len() as f64;
        assert_eq!(o, batch_cross_entropy(&p, &d).unwrap());
        assert!((o - ce).abs() < 1e-14);
    }

    #[test]
    fn objective_adds_full_penalty() {
        // zero params: p1 = 0.5 everywhere, so R = 0.5; pick a dataset where the
        // protected group is absent from eop's set but present for dp.
        let p = MlpParams::zeros(Architecture::new(vec![1, 2]).unwrap());
        let d = Dataset::new(vec![0.0, 1.0], 1, vec![0, 1], vec![0, 1]).unwrap();
        let base = objective(&p, &d, Regularizer::DemographicParity, 0.0).unwrap();
        let dp = objective(&p, &d, Regularizer::DemographicParity, 1.0).unwrap();
        assert!((dp - base - 0.5).abs() < 1e-15);
        let eop = objective(&p, &d, Regularizer::EqualOpportunity, 3.0).unwrap();
        assert_eq!(eop, base);
    }

    #[test]
    fn output_bias_gradient_vanishes_at_uniform_prediction() {
        let arch = Architecture::new(vec![2, 3, 2]).unwrap();
        let p = MlpParams::zeros(arch);
        let d = Dataset::new(
            vec![1.0, 2.0, -1.0, 0.5, 3.0, 3.0, 0.0, -2.0],
            2,
            vec![1, 0, 1, 0],
            vec![0, 1, 1, 0],
        )
        .unwrap();
        let g = grad_objective(&p, &d, Regularizer::DemographicParity, 0.0).unwrap();
        let n = g.len();
        assert_eq!(&g.values()[n - 2..], &[0.0, 0.0]);
    }

    #[test]
    fn gradient_has_mean_semantics() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_params(vec![2, 5, 2], &mut rng);
        let d = random_dataset(6, 2, &mut rng);
        let dd = d.concat(&d).unwrap();
        let g1 = grad_objective(&p, &d, Regularizer::DemographicParity, 2.0).unwrap();
        let g2 = grad_objective(&p, &dd, Regularizer::DemographicParity, 2.0).unwrap();
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn inner_update_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(vec![2, 4, 2], &mut rng);
        let d = random_dataset(5, 2, &mut rng);
        let same = inner_update(&p, &d, 0.0, Regularizer::DemographicParity, 1.0).unwrap();
        assert_eq!(same, p);

        let stepped = inner_update(&p, &d, 0.25, Regularizer::DemographicParity, 1.0).unwrap();
        let g = grad_objective(&p, &d, Regularizer::DemographicParity, 1.0).unwrap();
        for ((s, t), g) in stepped.values().iter().zip(p.values()).zip(g.values()) {
            assert_eq!(*s, t - 0.25 * g);
        }
        assert!(inner_update(&p, &d, -0.1, Regularizer::DemographicParity, 1.0).is_err());

        assert_eq!(gradient_step(&HalfSquare, &[1.0], 0.3), vec![0.7]);
    }

    #[test]
    fn meta_gradient_on_scalar_quadratic() {
        let (g, value) = differentiate_through_steps(&HalfSquare, &HalfSquare, &[2.0], 0.3, 1);
        assert!((g[0] - 0.98).abs() < 1e-12);
        assert!((value - 0.5 * 1.4 * 1.4).abs() < 1e-12);
        // two steps: (1-α)^4 θ
        let (g, _) = differentiate_through_steps(&HalfSquare, &HalfSquare, &[2.0], 0.3, 2);
        assert!((g[0] - 0.7f64.powi(4) * 2.0).abs() < 1e-12);
    }

    #[test]
    fn meta_gradient_with_zero_step_is_query_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_params(vec![2, 3, 3, 2], &mut rng);
        let d = random_dataset(4, 2, &mut rng);
        let dq = random_dataset(4, 2, &mut rng);
        let m = meta_gradient(&p, &d, &dq, 0.0, Regularizer::EqualOpportunity, 1.5).unwrap();
        let g = grad_objective(&p, &dq, Regularizer::EqualOpportunity, 1.5).unwrap();
        assert_eq!(m, g);
    }

    #[test]
    fn hvp_is_symmetric() {
        // u·(Hv) == v·(Hu)
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_params(vec![3, 4, 4, 2], &mut rng);
        let d = random_dataset(7, 3, &mut rng);
        let n = p.len();
        let u = FlatGradient::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let v = FlatGradient::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let hu = hessian_vector_product(&p, &d, Regularizer::DemographicParity, 2.0, &u).unwrap();
        let hv = hessian_vector_product(&p, &d, Regularizer::DemographicParity, 2.0, &v).unwrap();
        let a: f64 = u.values().iter().zip(hv.values()).map(|(x, y)| x * y).sum();
        let b: f64 = v.values().iter().zip(hu.values()).map(|(x, y)| x * y).sum();
        assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn meta_step_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_params(vec![2, 5, 5, 2], &mut rng);
        let d = random_dataset(5, 2, &mut rng);
        let dq = random_dataset(5, 2, &mut rng);
        let a = meta_step(&p, &d, &dq, 0.3, 1, Regularizer::DemographicParity, 4.0).unwrap();
        let b = meta_step(&p, &d, &dq, 0.3, 1, Regularizer::DemographicParity, 4.0).unwrap();
        assert_eq!(a, b);
    }
}
