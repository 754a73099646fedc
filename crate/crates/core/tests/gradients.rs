mod common;

use common::*;
use fairmaml::nn::{self, MlpParams};
use fairmaml::{Dataset, Regularizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REGS: [Regularizer; 2] = [Regularizer::DemographicParity, Regularizer::EqualOpportunity];

struct Draw {
    params: MlpParams,
    support: Dataset,
    query: Dataset,
    reg: Regularizer,
    gamma: f64,
}

/// Random instance whose hidden pre-activations stay at least `1e-3` from
/// the ReLU kink at both the initial and the adapted parameters.
fn draw(rng: &mut ChaCha8Rng, alpha: f64) -> Draw {
    loop {
        let dims = random_dims(rng);
        let params = random_params(dims.clone(), rng);
        let k = rng.random_range(1..=16);
        let support = random_dataset(k, dims[0], rng);
        let query = random_dataset(k, dims[0], rng);
        let reg = REGS[rng.random_range(0..2)];
        let gamma = [0.0, 1.0, 5.0][rng.random_range(0..3)];
        let adapted = nn::inner_update(&params, &support, alpha, reg, gamma).unwrap();
        if min_hidden_margin(&params, &support) > 1e-3
            && min_hidden_margin(&params, &query) > 1e-3
            && min_hidden_margin(&adapted, &query) > 1e-3
        {
            return Draw {
                params,
                support,
                query,
                reg,
                gamma,
            };
        }
    }
}

#[test]
fn grad_objective_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = draw(&mut rng, 0.0);
        let arch = d.params.architecture().clone();
        let analytic = nn::grad_objective(&d.params, &d.support, d.reg, d.gamma).unwrap();
        let numeric = central_differences(
            |t| {
                let p = MlpParams::from_flat(arch.clone(), t.to_vec()).unwrap();
                nn::objective(&p, &d.support, d.reg, d.gamma).unwrap()
            },
            d.params.values(),
            FD_STEP,
        );
        worst = worst.max(max_relative_error(analytic.values(), &numeric, ABS_FLOOR));
    }
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

#[test]
fn meta_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let alpha = rng.random_range(0.05..0.5);
        let d = draw(&mut rng, alpha);
        let arch = d.params.architecture().clone();
        let analytic = nn::meta_gradient(&d.params, &d.support, &d.query, alpha, d.reg, d.gamma).unwrap();
        let numeric = central_differences(
            |t| {
                let p = MlpParams::from_flat(arch.clone(), t.to_vec()).unwrap();
                let adapted = nn::inner_update(&p, &d.support, alpha, d.reg, d.gamma).unwrap();
                nn::objective(&adapted, &d.query, d.reg, d.gamma).unwrap()
            },
            d.params.values(),
            FD_STEP,
        );
        worst = worst.max(max_relative_error(analytic.values(), &numeric, ABS_FLOOR));
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn small_network_meta_gradient() {
    // 2-3-3-2 network, K = 4
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let alpha = 0.3;
    let (params, support, query) = loop {
        let p = random_params(vec![2, 3, 3, 2], &mut rng);
        let s = random_dataset(4, 2, &mut rng);
        let q = random_dataset(4, 2, &mut rng);
        let a = nn::inner_update(&p, &s, alpha, Regularizer::DemographicParity, 1.0).unwrap();
        if min_hidden_margin(&p, &s) > 1e-3 && min_hidden_margin(&a, &q) > 1e-3 {
            break (p, s, q);
        }
    };
    let arch = params.architecture().clone();
    let analytic = nn::meta_gradient(&params, &support, &query, alpha, Regularizer::DemographicParity, 1.0).unwrap();
    let numeric = central_differences(
        |t| {
            let p = MlpParams::from_flat(arch.clone(), t.to_vec()).unwrap();
            let a = nn::inner_update(&p, &support, alpha, Regularizer::DemographicParity, 1.0).unwrap();
            nn::objective(&a, &query, Regularizer::DemographicParity, 1.0).unwrap()
        },
        params.values(),
        FD_STEP,
    );
    assert!(max_relative_error(analytic.values(), &numeric, ABS_FLOOR) < 1e-4);
}

#[test]
fn gradient_is_affine_in_gamma() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let d = draw(&mut rng, 0.0);
        let g = |gamma| nn::grad_objective(&d.params, &d.support, d.reg, gamma).unwrap();
        let (g0, g1) = (g(0.0), g(1.0));
        for gamma in [0.5, 3.0, 10.0] {
            let gg = g(gamma);
            for ((a, b0), b1) in gg.values().iter().zip(g0.values()).zip(g1.values()) {
                assert!((a - (b0 + gamma * (b1 - b0))).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn regularizer_gradient_alone_matches_finite_differences() {
    // isolate the penalty: gradient of (objective at γ=1) - (objective at γ=0)
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let d = draw(&mut rng, 0.0);
        let arch = d.params.architecture().clone();
        for reg in REGS {
            let g1 = nn::grad_objective(&d.params, &d.support, reg, 1.0).unwrap();
            let g0 = nn::grad_objective(&d.params, &d.support, reg, 0.0).unwrap();
            let analytic: Vec<f64> = g1.values().iter().zip(g0.values()).map(|(a, b)| a - b).collect();
            let numeric = central_differences(
                |t| {
                    let p = MlpParams::from_flat(arch.clone(), t.to_vec()).unwrap();
                    fairmaml::fairness::penalty(&p, &d.support, reg).unwrap()
                },
                d.params.values(),
                FD_STEP,
            );
            assert!(max_relative_error(&analytic, &numeric, ABS_FLOOR) < 1e-5);
        }
    }
}
