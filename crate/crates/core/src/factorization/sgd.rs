use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{converged, objective_unchecked, FactorModel, TraceKind, TrainConfig, TrainTrace};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::ratings::RatingsMatrix;

/// One entry's share of the objective:
/// `(r - p.q)^2 + lambda (|p|^2 + |q|^2)`.
pub fn entry_objective(p: &[f64], q: &[f64], rating: f64, lambda: f64) -> f64 {
    let e = rating - dot(p, q);
    e * e + lambda * (dot(p, p) + dot(q, q))
}

/// Gradient of [`entry_objective`] with respect to `p` and `q`.
///
/// An SGD step moves against this gradient with step size `eta / 2`, which
/// gives the familiar `p += eta (e q - lambda p)`.
pub fn entry_gradient(p: &[f64], q: &[f64], rating: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let e = rating - dot(p, q);
    let gp = p
        .iter()
        .zip(q)
        .map(|(&pf, &qf)| -2.0 * (e * qf - lambda * pf))
        .collect();
    let gq = p
        .iter()
        .zip(q)
        .map(|(&pf, &qf)| -2.0 * (e * pf - lambda * qf))
        .collect();
    (gp, gq)
}

#[inline]
fn sgd_step(p: &mut [f64], q: &mut [f64], rating: f64, lambda: f64, eta: f64) {
    let e = rating - dot(p, q);
    for (pf, qf) in p.iter_mut().zip(q.iter_mut()) {
        let (p0, q0) = (*pf, *qf);
        *pf += eta * (e * q0 - lambda * p0);
        *qf += eta * (e * p0 - lambda * q0);
    }
}

/// Stochastic gradient descent over the observed entries, visited in a
/// freshly shuffled order every epoch.
pub fn train_sgd(train: &RatingsMatrix, config: &TrainConfig) -> Result<(FactorModel, TrainTrace)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = FactorModel::init(train, config, &mut rng);
    let mut trace = TrainTrace::new(TraceKind::PerEpoch, objective_unchecked(&model, train));
    let entries = train.entries();
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let k = config.rank;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (p_all, q_all) = (model.user_factors.as_mut_slice(), model.item_factors.as_mut_slice());
        for &e in &order {
            let r = entries[e];
            let (u, i) = (r.user as usize * k, r.item as usize * k);
            sgd_step(
                &mut p_all[u..u + k],
                &mut q_all[i..i + k],
                r.value,
                config.lambda,
                config.learning_rate,
            );
        }
        let obj = objective_unchecked(&model, train);
        trace.objective.push(obj);
        trace.epochs_run = epoch + 1;
        if !obj.is_finite() {
            return Err(Error::Diverged {
                epoch,
                trace: trace.objective,
            });
        }
        let prev = trace.objective[trace.objective.len() - 2];
        if converged(prev, obj, config.convergence_tol) {
            trace.stopped_early = epoch + 1 < config.epochs;
            break;
        }
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorization::{objective, Optimizer};
    use crate::ratings::build_ratings;

    fn rank_one(m: u32, n: u32) -> RatingsMatrix {
        let mut t = Vec::new();
        for u in 0..m {
            for i in 0..n {
                let a = 1.0 + 0.05 * u as f64;
                let b = 1.0 + 0.1 * (i % 7) as f64;
                t.push((u, i, a * b));
            }
        }
        build_ratings(t).unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            optimizer: Optimizer::Sgd,
            epochs: 200,
            learning_rate: 0.02,
            lambda: 0.0,
            rank: 1,
            init_scale: 1.0,
            seed: 11,
            convergence_tol: 0.0,
        }
    }

    #[test]
    fn fits_rank_one_matrix() {
        let r = rank_one(20, 15);
        let (model, trace) = train_sgd(&r, &config()).unwrap();
        assert!(objective(&model, &r).unwrap() < 1e-4, "{:?}", trace.objective.last());
        for e in r.entries() {
            assert!((model.predict(e.user, e.item) - e.value).abs() < 1e-3);
        }
    }

    #[test]
    fn huge_lambda_shrinks_factors() {
        let r = rank_one(20, 15);
        let cfg = TrainConfig {
            lambda: 1e6,
            learning_rate: 1e-7,
            epochs: 50,
            rank: 4,
            ..config()
        };
        let (model, _) = train_sgd(&r, &cfg).unwrap();
        let sum_sq: f64 = r.entries().iter().map(|e| e.value * e.value).sum();
        let obj = objective(&model, &r).unwrap();
        assert!((obj - sum_sq).abs() / sum_sq < 0.01, "{obj} vs {sum_sq}");
    }

    #[test]
    fn same_seed_same_model() {
        let r = rank_one(10, 8);
        let cfg = TrainConfig {
            epochs: 20,
            rank: 3,
            ..config()
        };
        let (a, ta) = train_sgd(&r, &cfg).unwrap();
        let (b, tb) = train_sgd(&r, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn divergence_is_reported() {
        let r = rank_one(10, 8);
        let cfg = TrainConfig {
            learning_rate: 10.0,
            rank: 3,
            ..config()
        };
        assert!(matches!(train_sgd(&r, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn empty_train_is_rejected() {
        let r = build_ratings(Vec::new()).unwrap();
        assert!(matches!(train_sgd(&r, &config()), Err(Error::EmptyMatrix)));
    }
}
