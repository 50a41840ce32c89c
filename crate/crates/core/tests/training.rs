use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sdehgnn::hypergraph::{Hypergraph, HypergraphConfig};
use sdehgnn::model::{ModelConfig, PreparedSubject, PreparedVisit, TemporalMode};
use sdehgnn::objective::{crossval, make_folds, train, AdamConfig, LossWeights, TrainConfig};
use sdehgnn::tensor::Tensor;
use sdehgnn::Error;

fn toy_config(seed: u64) -> ModelConfig {
    ModelConfig {
        n_nodes: 6,
        feature_dim: 6,
        latent_dim: 3,
        hypergraph: HypergraphConfig { k: 2, q: 1.0, include_center: true },
        mlp_hidden: 8,
        drift_hidden: 8,
        temporal_mode: TemporalMode::Sde,
        solver_steps: 4,
        seed,
        ..ModelConfig::default()
    }
}

/// Single-visit subjects whose features are shifted by `±1` depending on the label.
fn separable_cohort(n: usize, times: &[f64], seed: u64) -> Vec<PreparedSubject> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = toy_config(0);
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let shift = if label == 1 { 1.0 } else { -1.0 };
            let visits = times
                .iter()
                .map(|&t| {
                    let data: Vec<f64> = (0..36).map(|_| shift + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
                    let x = Tensor::matrix(6, 6, data).unwrap();
                    let hypergraph = Hypergraph::from_features(&x, &cfg.hypergraph).unwrap();
                    PreparedVisit { time_months: t, x, hypergraph }
                })
                .collect();
            PreparedSubject { subject_id: format!("toy-{i:02}"), label, visits }
        })
        .collect()
}

fn train_config(epochs: usize, lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        optimizer: AdamConfig { lr, ..AdamConfig::default() },
        seed,
    }
}

#[test]
fn zero_learning_rate_keeps_parameters_bit_identical() {
    let data = separable_cohort(10, &[0.0, 12.0], 1);
    let out = train(&toy_config(3), &data, &data, &LossWeights::default(), &train_config(3, 0.0, 5)).unwrap();
    let mut fresh = sdehgnn::nn::Params::new();
    sdehgnn::model::SpatioTemporalModel::new(toy_config(3), &mut fresh).unwrap();
    for ((na, a), (nb, b)) in out.params.iter().zip(fresh.iter()) {
        assert_eq!(na, nb);
        assert_eq!(a, b, "{na}");
    }
}

#[test]
fn separable_toy_loss_halves_for_most_seeds() {
    let mut successes = 0;
    for seed in 0..20 {
        let data = separable_cohort(20, &[0.0], 100 + seed);
        let out = train(&toy_config(seed), &data, &data, &LossWeights::default(), &train_config(100, 1e-2, seed)).unwrap();
        let first = out.log[0].train_loss;
        let last = out.log.last().unwrap().train_loss;
        if last <= 0.5 * first {
            successes += 1;
        }
    }
    assert!(successes >= 18, "{successes}/20 seeds halved the loss");
}

#[test]
fn training_is_deterministic() {
    let data = separable_cohort(12, &[0.0, 10.0, 30.0], 7);
    let cfg = train_config(4, 1e-2, 11);
    let a = train(&toy_config(2), &data, &data, &LossWeights::default(), &cfg).unwrap();
    let b = train(&toy_config(2), &data, &data, &LossWeights::default(), &cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.best_epoch, b.best_epoch);
    for ((_, x), (_, y)) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(x, y);
    }
}

#[test]
fn single_class_training_split_is_rejected() {
    let data: Vec<PreparedSubject> = separable_cohort(10, &[0.0], 2).into_iter().filter(|s| s.label == 1).collect();
    let err = train(&toy_config(0), &data, &data, &LossWeights::default(), &train_config(1, 1e-3, 0)).unwrap_err();
    assert!(matches!(err, Error::Cohort(_)));
}

#[test]
fn folds_are_stratified_within_one_subject() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n1 = rng.random_range(5..30);
        let n0 = rng.random_range(5..60);
        let mut labels: Vec<u8> = std::iter::repeat_n(0, n0).chain(std::iter::repeat_n(1, n1)).collect();
        for i in (1..labels.len()).rev() {
            labels.swap(i, rng.random_range(0..=i));
        }
        let total = labels.len() as f64;
        let ratio = n1 as f64 / total;
        let folds = make_folds(&labels, rng.random()).unwrap();
        let mut seen = vec![0; labels.len()];
        for f in &folds {
            for &i in &f.test {
                seen[i] += 1;
            }
            // Chunks are balanced to one subject; the three-chunk train split to 1.5.
            for (part, tol) in [(&f.val, 1.0), (&f.test, 1.0), (&f.train, 1.5)] {
                let pos = part.iter().filter(|&&i| labels[i] == 1).count() as f64;
                assert!((pos - ratio * part.len() as f64).abs() <= tol + 1e-9, "n0={n0} n1={n1} part={} pos={pos}", part.len());
            }
            let mut all: Vec<usize> = f.train.iter().chain(&f.val).chain(&f.test).copied().collect();
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), labels.len());
            assert!((f.test.len() as f64 - total / 5.0).abs() < 1.0);
        }
        assert!(seen.iter().all(|&c| c == 1));
    }
}

#[test]
fn crossval_reports_five_folds_and_parallel_matches_serial() {
    let data = separable_cohort(20, &[0.0, 12.0], 9);
    let cfg = train_config(3, 1e-2, 1);
    let serial = crossval(&data, &toy_config(4), &LossWeights::default(), &cfg, 6, 1).unwrap();
    let parallel = crossval(&data, &toy_config(4), &LossWeights::default(), &cfg, 6, 3).unwrap();
    assert_eq!(serial.folds.len(), 5);
    assert_eq!(serial.csv(), parallel.csv());
    assert_eq!(serial.csv().lines().count(), 7);
    assert!(serial.csv().starts_with("fold,AUC,Accuracy,Sensitivity,Specificity\n"));
}
