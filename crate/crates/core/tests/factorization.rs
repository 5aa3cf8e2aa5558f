mod common;

use cfkit::factorization::{
    als_item_step, als_user_step, complete, entry_gradient, entry_objective, objective, read_model, train, write_model,
    FactorMatrix, FactorModel, Optimizer, TrainConfig,
};
use cfkit::ratings::{build_ratings, RatingsMatrix};
use common::{dot, matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(m: &RatingsMatrix, k: usize, lambda: f64, seed: u64) -> FactorModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |rows: usize| {
        let data = (0..rows * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        FactorMatrix::from_vec(rows, k, data).unwrap()
    };
    FactorModel {
        user_factors: fill(m.num_users()),
        item_factors: fill(m.num_items()),
        lambda,
        seed,
        global_mean: m.global_mean().unwrap(),
        scale: m.scale(),
        user_known: vec![true; m.num_users()],
        item_known: vec![true; m.num_items()],
    }
}

/// Objective from the definition, written independently of the library.
fn oracle_objective(model: &FactorModel, m: &RatingsMatrix) -> f64 {
    let fit: f64 = m
        .entries()
        .iter()
        .map(|r| {
            let e = r.value
                - dot(
                    model.user_factors.row(r.user as usize),
                    model.item_factors.row(r.item as usize),
                );
            e * e
        })
        .sum();
    let norm = |f: &FactorMatrix| f.as_slice().iter().map(|x| x * x).sum::<f64>();
    fit + model.lambda * (norm(&model.user_factors) + norm(&model.item_factors))
}

/// Exactly rank-`k` matrix with a fraction `keep` of cells observed.
fn low_rank(users: u32, items: u32, k: usize, keep: f64, seed: u64) -> RatingsMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p: Vec<Vec<f64>> = (0..users)
        .map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let q: Vec<Vec<f64>> = (0..items)
        .map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut triples = Vec::new();
    for u in 0..users {
        for i in 0..items {
            if rng.random_bool(keep) {
                triples.push((u, i, dot(&p[u as usize], &q[i as usize])));
            }
        }
    }
    build_ratings(triples).unwrap()
}

fn raw_rmse(model: &FactorModel, m: &RatingsMatrix) -> f64 {
    let sq: f64 = m
        .entries()
        .iter()
        .map(|r| {
            let e = r.value - model.score(r.user, r.item).unwrap();
            e * e
        })
        .sum();
    (sq / m.len() as f64).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_central_differences(
        pq in proptest::collection::vec(-2.0f64..2.0, 2..=16),
        rating in 1.0f64..5.0,
        lambda in 0.0f64..1.0,
    ) {
        let k = pq.len() / 2;
        let (p, q) = (&pq[..k], &pq[k..2 * k]);
        let (gp, gq) = entry_gradient(p, q, rating, lambda);
        let h = 1e-6;
        for (which, grad) in [(0, &gp), (1, &gq)] {
            for j in 0..k {
                let bump = |d: f64| {
                    let (mut p2, mut q2) = (p.to_vec(), q.to_vec());
                    if which == 0 { p2[j] += d } else { q2[j] += d }
                    entry_objective(&p2, &q2, rating, lambda)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let err = (fd - grad[j]).abs() / fd.abs().max(grad[j].abs()).max(1.0);
                prop_assert!(err < 1e-5, "coordinate {j}: analytic {} vs numeric {fd}", grad[j]);
            }
        }
    }

    #[test]
    fn als_half_steps_never_increase_the_objective(m in matrix(12, 10, 4), k in 1usize..5, lambda in 0.01f64..1.0) {
        let mut model = random_model(&m, k, lambda, 3);
        let mut last = objective(&model, &m).unwrap();
        for _ in 0..8 {
            for user_side in [true, false] {
                if user_side { als_user_step(&mut model, &m); } else { als_item_step(&mut model, &m); }
                let now = objective(&model, &m).unwrap();
                prop_assert!(now <= last + 1e-9 * last.max(1.0), "{last} -> {now}");
                last = now;
            }
        }
    }

    #[test]
    fn objective_matches_definition(m in matrix(10, 10, 1), k in 1usize..6, lambda in 0.0f64..2.0) {
        let model = random_model(&m, k, lambda, 11);
        let a = objective(&model, &m).unwrap();
        let b = oracle_objective(&model, &m);
        prop_assert!((a - b).abs() <= 1e-10 * b.max(1.0));
    }
}

#[test]
fn both_optimizers_recover_an_exact_low_rank_matrix() {
    let m = low_rank(40, 30, 3, 0.6, 5);
    for (optimizer, epochs, lr) in [(Optimizer::Als, 400, 0.0), (Optimizer::Sgd, 3000, 0.02)] {
        let config = TrainConfig {
            optimizer,
            epochs,
            learning_rate: if lr > 0.0 { lr } else { 0.005 },
            lambda: 0.0,
            rank: 3,
            init_scale: 0.3,
            seed: 1,
            convergence_tol: 0.0,
        };
        let (model, _) = train(&m, &config).unwrap();
        let rmse = raw_rmse(&model, &m);
        assert!(rmse < 1e-3, "{optimizer}: training RMSE {rmse}");
    }
}

#[test]
fn converged_objective_grows_with_lambda() {
    let m = low_rank(30, 25, 4, 0.5, 9);
    let mut previous = f64::NEG_INFINITY;
    for lambda in [0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0] {
        let config = TrainConfig {
            optimizer: Optimizer::Als,
            epochs: 300,
            lambda,
            rank: 4,
            seed: 2,
            convergence_tol: 0.0,
            ..TrainConfig::default()
        };
        let (model, trace) = train(&m, &config).unwrap();
        let j = trace.final_objective();
        assert!((j - oracle_objective(&model, &m)).abs() <= 1e-9 * j.max(1.0));
        assert!(j >= previous - 1e-9, "lambda {lambda}: {j} < {previous}");
        previous = j;
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let m = low_rank(20, 15, 2, 0.5, 1);
    for optimizer in [Optimizer::Sgd, Optimizer::Als] {
        let config = TrainConfig {
            optimizer,
            epochs: 20,
            rank: 4,
            seed: 42,
            ..TrainConfig::default()
        };
        let (a, ta) = train(&m, &config).unwrap();
        let (b, tb) = train(&m, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = train(&m, &TrainConfig { seed: 43, ..config }).unwrap();
        assert_ne!(a.user_factors, c.user_factors);
    }
}

#[test]
fn early_stopping_cuts_training_short() {
    let m = low_rank(20, 15, 2, 0.5, 1);
    let config = TrainConfig {
        optimizer: Optimizer::Als,
        epochs: 500,
        rank: 2,
        lambda: 0.1,
        convergence_tol: 1e-6,
        ..TrainConfig::default()
    };
    let (_, trace) = train(&m, &config).unwrap();
    assert!(trace.stopped_early);
    assert!(trace.epochs_run < 500);
    assert_eq!(trace.objective.len(), 1 + 2 * trace.epochs_run);
}

#[test]
fn model_file_round_trips_and_rejects_garbage() {
    let m = low_rank(12, 9, 2, 0.7, 4);
    let (model, _) = train(
        &m,
        &TrainConfig {
            rank: 3,
            epochs: 5,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let mut bytes = Vec::new();
    write_model(&model, &mut bytes).unwrap();
    let back = read_model(bytes.as_slice()).unwrap();
    assert_eq!(back, model);

    assert!(read_model(&b"nope"[..]).is_err());
    let truncated = &bytes[..bytes.len() - 3];
    assert!(read_model(truncated).is_err());
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] ^= 0xff;
    assert!(read_model(wrong_magic.as_slice()).is_err());
}

#[test]
fn completion_keeps_observed_cells_and_fills_the_rest_with_p_times_q() {
    let mut triples = Vec::new();
    for u in 0..5u32 {
        for i in 0..5u32 {
            if (u + 2 * i) % 3 == 0 || u == i {
                triples.push((u, i, (1 + (u * 3 + i) % 5) as f64));
            }
        }
    }
    let m = build_ratings(triples).unwrap();
    let (model, _) = train(
        &m,
        &TrainConfig {
            rank: 2,
            epochs: 30,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let (p, q) = (model.user_factors.as_slice(), model.item_factors.as_slice());
    let dense = complete(&model, &m).to_dense();
    assert_eq!(dense.len(), 25);
    let mut filled = 0;
    for u in 0..5usize {
        for i in 0..5usize {
            let cell = dense[u * 5 + i];
            match m.get(u as u32, i as u32) {
                Some(r) => assert_eq!(cell, r),
                None => {
                    let raw: f64 = (0..2).map(|f| p[u * 2 + f] * q[i * 2 + f]).sum();
                    let oracle = raw.clamp(1.0, 5.0);
                    assert!((cell - oracle).abs() < 1e-12, "({u},{i}): {cell} vs {oracle}");
                    filled += 1;
                }
            }
        }
    }
    assert!(filled > 0);
}

#[test]
fn initial_factors_lie_within_the_scaled_bound() {
    let m = build_ratings((0..30u32).map(|x| (x % 6, x / 6, 3.0))).unwrap();
    for (k, scale) in [(1, 0.1), (4, 0.5), (9, 2.0)] {
        let (model, _) = train(
            &m,
            &TrainConfig {
                rank: k,
                init_scale: scale,
                epochs: 0,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let bound = scale / (k as f64).sqrt();
        let all: Vec<f64> = model
            .user_factors
            .as_slice()
            .iter()
            .chain(model.item_factors.as_slice())
            .copied()
            .collect();
        assert!(all.iter().all(|x| x.abs() <= bound));
        assert!(all.iter().any(|x| x.abs() > bound / 2.0));
        assert!(all.iter().any(|&x| x > 0.0) && all.iter().any(|&x| x < 0.0));
    }
}

#[test]
fn unknown_entities_fall_back_to_the_global_mean() {
    let m = build_ratings([(0, 0, 5.0), (1, 1, 3.0), (2, 3, 4.0)]).unwrap();
    let (model, _) = train(
        &m,
        &TrainConfig {
            rank: 2,
            epochs: 3,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let mean = m.global_mean().unwrap();
    assert_eq!(model.predict(0, 2), mean);
    assert_eq!(model.predict(99, 0), mean);
    assert_eq!(model.predict(0, 99), mean);
    assert_eq!(model.score(99, 0), None);
}

#[test]
fn bad_configs_are_rejected() {
    let m = low_rank(5, 5, 1, 1.0, 0);
    for bad in [
        TrainConfig {
            rank: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            lambda: -1.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            convergence_tol: f64::NAN,
            ..TrainConfig::default()
        },
    ] {
        assert!(train(&m, &bad).is_err(), "{bad:?}");
    }
    let empty = build_ratings(std::iter::empty()).unwrap();
    assert!(train(&empty, &TrainConfig::default()).is_err());
}
