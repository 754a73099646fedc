use fairmaml::experiment::{run_cc, CcSettings};
use fairmaml::fairness::reg_dp;
use fairmaml::nn::FlatGradient;
use fairmaml::synth::{self, PhiInterpretation};
use fairmaml::tasks::{DistributionKind, TaskDistribution};
use fairmaml::train::{fair_maml_train, pretrain_baseline, Adam, AdamConfig, CachedBatches, MetaConfig};
use fairmaml::{cc, Error, Regularizer};

fn synthetic_tasks(seed: u64) -> TaskDistribution {
    let generated = synth::generate_train_tasks(
        100,
        100,
        seed,
        PhiInterpretation::Literal,
        Regularizer::DemographicParity,
        0.0,
    )
    .unwrap();
    TaskDistribution::new(
        DistributionKind::SyntheticTrain,
        generated.into_iter().map(|(_, t)| t).collect(),
    )
    .unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn adam_matches_reference_trace() {
    // f(θ) = ½ Σ c_i θ_i², gradient c ⊙ θ
    let c = [1.0, 10.0, 0.1];
    let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
    let mut theta = [1.0, -2.0, 3.0];
    let mut reference = theta;
    let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
    let mut adam = Adam::new(3, AdamConfig::default());
    for t in 1..=10 {
        let g: Vec<f64> = (0..3).map(|i| c[i] * theta[i]).collect();
        let u = adam.step(&FlatGradient::new(g), lr).unwrap();
        for i in 0..3 {
            theta[i] -= u.values()[i];
        }
        for i in 0..3 {
            let g = c[i] * reference[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let mh = m[i] / (1.0 - f64::powi(b1, t));
            let vh = v[i] / (1.0 - f64::powi(b2, t));
            reference[i] -= lr * mh / (vh.sqrt() + eps);
        }
        for i in 0..3 {
            assert!(
                (theta[i] - reference[i]).abs() < 1e-14,
                "step {t}: {theta:?} vs {reference:?}"
            );
        }
    }
}

#[test]
fn meta_objective_decreases() {
    let tasks = synthetic_tasks(0);
    for seed in [1, 2, 3] {
        let cfg = MetaConfig {
            meta_iters: 50,
            seed,
            ..Default::default()
        };
        let report = fair_maml_train(&tasks, &cfg).unwrap();
        assert_eq!(report.trace.len(), 50);
        let (first, last) = (mean(&report.trace[..10]), mean(&report.trace[40..]));
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn zero_gamma_ignores_regularizer_choice() {
    let tasks = synthetic_tasks(1);
    let dp = MetaConfig {
        meta_iters: 10,
        seed: 4,
        gamma: 0.0,
        ..Default::default()
    };
    let eop = MetaConfig {
        regularizer: Regularizer::EqualOpportunity,
        ..dp.clone()
    };
    let a = fair_maml_train(&tasks, &dp).unwrap();
    let b = fair_maml_train(&tasks, &eop).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.params, b.params);
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let tasks = synthetic_tasks(2);
    let cfg = MetaConfig {
        meta_iters: 8,
        seed: 9,
        gamma: 2.0,
        ..Default::default()
    };
    let a = fair_maml_train(&tasks, &cfg).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| fair_maml_train(&tasks, &cfg).unwrap());
    assert!(a.same_result(&b));
    let p = pretrain_baseline(&tasks, &cfg).unwrap();
    assert!(p.same_result(&pretrain_baseline(&tasks, &cfg).unwrap()));
}

#[test]
fn meta_batch_order_does_not_matter() {
    let tasks = synthetic_tasks(3);
    let cfg = MetaConfig {
        meta_iters: 6,
        seed: 5,
        gamma: 1.0,
        ..Default::default()
    };
    let cached = CachedBatches::sample(&tasks, 3, cfg.meta_batch, cfg.k, 17).unwrap();
    let reversed = CachedBatches::from_batches(
        cached
            .batches()
            .iter()
            .map(|b| b.iter().rev().cloned().collect())
            .collect(),
        2,
    )
    .unwrap();
    let a = fair_maml_train(&cached, &cfg).unwrap();
    let b = fair_maml_train(&reversed, &cfg).unwrap();
    assert!(a
        .params
        .values()
        .iter()
        .zip(b.params.values())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.trace.iter().zip(&b.trace).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn baseline_exposure_and_fairness_direction() {
    let tasks = synthetic_tasks(4);
    for seed in [1, 2, 3] {
        let plain = MetaConfig {
            meta_iters: 40,
            seed,
            ..Default::default()
        };
        let fair = MetaConfig {
            gamma: 5.0,
            ..plain.clone()
        };
        let a = pretrain_baseline(&tasks, &plain).unwrap();
        let b = pretrain_baseline(&tasks, &fair).unwrap();
        assert_eq!(a.tasks_seen, 40 * 32);
        let penalty = |r: &fairmaml::train::TrainReport| {
            mean(
                &tasks
                    .tasks()
                    .iter()
                    .map(|t| reg_dp(&r.params, &t.data).unwrap())
                    .collect::<Vec<_>>(),
            )
        };
        assert!(
            penalty(&b) < penalty(&a),
            "seed {seed}: {} vs {}",
            penalty(&b),
            penalty(&a)
        );
    }
}

#[test]
fn divergence_reports_iteration() {
    let tasks = synthetic_tasks(5);
    let cfg = MetaConfig {
        meta_iters: 3,
        alpha: 1e300,
        ..Default::default()
    };
    assert!(matches!(
        fair_maml_train(&tasks, &cfg),
        Err(Error::NonFinite { iteration: 0 })
    ));
}

#[test]
fn zero_gamma_sweep_row_matches_unregularized_run() {
    let path = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/communities.data");
    let data = cc::load_cc(&path).unwrap();
    let base = CcSettings {
        meta: MetaConfig {
            meta_iters: 5,
            ..CcSettings::default().meta
        },
        seeds: vec![0],
        dp_gammas: vec![0.0],
        eop_gammas: vec![0.0],
        regularizers: vec![Regularizer::DemographicParity],
        ..Default::default()
    };
    let eop = CcSettings {
        regularizers: vec![Regularizer::EqualOpportunity],
        ..base.clone()
    };
    let a = run_cc(&data, &base).unwrap();
    let b = run_cc(&data, &eop).unwrap();
    assert_eq!(a.sweeps.len(), 2);
    for (x, y) in a.sweeps.iter().zip(&b.sweeps) {
        assert_eq!(x.rows, y.rows);
    }
    assert_eq!(a.sweeps[0].rows.len(), 5);
}
