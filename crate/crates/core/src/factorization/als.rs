use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{converged, objective_unchecked, FactorMatrix, FactorModel, TraceKind, TrainConfig, TrainTrace};
use crate::error::{Error, Result};
use crate::linalg::{accumulate, packed_len, ridge_solve};
use crate::par;
use crate::ratings::{RatingsMatrix, SparseRow};

/// Exact ridge solve for one row: `(X^T X + lambda I)^{-1} X^T r` where `X`
/// stacks the `fixed` rows named by `row.ids`. Returns true if jitter was needed.
pub(crate) fn solve_row(row: SparseRow<'_>, fixed: &FactorMatrix, lambda: f64, out: &mut [f64]) -> bool {
    let k = out.len();
    let mut gram = vec![0.0; packed_len(k)];
    let mut rhs = vec![0.0; k];
    for (id, r) in row.iter() {
        accumulate(&mut gram, &mut rhs, fixed.row(id as usize), r);
    }
    let mut scratch = Vec::with_capacity(k * k);
    ridge_solve(&gram, &rhs, lambda, &mut scratch, out)
}

/// Re-solves every user row with item factors fixed. Returns the number of
/// solves that needed jitter.
pub fn als_user_step(model: &mut FactorModel, train: &RatingsMatrix) -> usize {
    let jitter = AtomicUsize::new(0);
    let lambda = model.lambda;
    let k = model.rank();
    let items = &model.item_factors;
    par::for_each_row(model.user_factors.as_mut_slice(), k, |u, out| {
        if solve_row(train.user_row(u as u32), items, lambda, out) {
            jitter.fetch_add(1, Ordering::Relaxed);
        }
    });
    jitter.into_inner()
}

/// Re-solves every item row with user factors fixed.
pub fn als_item_step(model: &mut FactorModel, train: &RatingsMatrix) -> usize {
    let jitter = AtomicUsize::new(0);
    let lambda = model.lambda;
    let k = model.rank();
    let users = &model.user_factors;
    par::for_each_row(model.item_factors.as_mut_slice(), k, |i, out| {
        if solve_row(train.item_column(i as u32), users, lambda, out) {
            jitter.fetch_add(1, Ordering::Relaxed);
        }
    });
    jitter.into_inner()
}

/// Alternating least squares: each sweep solves all user rows exactly, then
/// all item rows. The objective is recorded after every half-step and never
/// increases (up to rounding).
pub fn train_als(train: &RatingsMatrix, config: &TrainConfig) -> Result<(FactorModel, TrainTrace)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = FactorModel::init(train, config, &mut rng);
    let mut trace = TrainTrace::new(TraceKind::PerHalfStep, objective_unchecked(&model, train));
    for sweep in 0..config.epochs {
        let before = *trace.objective.last().unwrap();
        trace.jitter_events += als_user_step(&mut model, train);
        trace.objective.push(objective_unchecked(&model, train));
        trace.jitter_events += als_item_step(&mut model, train);
        let after = objective_unchecked(&model, train);
        trace.objective.push(after);
        trace.epochs_run = sweep + 1;
        if !after.is_finite() {
            return Err(Error::Diverged {
                epoch: sweep,
                trace: trace.objective,
            });
        }
        if converged(before, after, config.convergence_tol) {
            trace.stopped_early = sweep + 1 < config.epochs;
            break;
        }
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorization::Optimizer;
    use crate::ratings::build_ratings;

    fn config(rank: usize, lambda: f64, epochs: usize) -> TrainConfig {
        TrainConfig {
            optimizer: Optimizer::Als,
            epochs,
            lambda,
            rank,
            init_scale: 1.0,
            seed: 3,
            convergence_tol: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn objective_never_increases() {
        let mut t = Vec::new();
        for u in 0..12u32 {
            for i in 0..9u32 {
                if (u * 5 + i * 7) % 3 != 0 {
                    t.push((u, i, ((u * i) % 5 + 1) as f64));
                }
            }
        }
        let r = build_ratings(t).unwrap();
        let (_, trace) = train_als(&r, &config(3, 0.1, 15)).unwrap();
        for w in trace.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{w:?}");
        }
    }

    #[test]
    fn user_without_ratings_gets_zero_row() {
        // user 1 exists only through the id space
        let r = RatingsMatrix::from_entries(
            2,
            2,
            vec![
                crate::ratings::Rating::new(0, 0, 4.0),
                crate::ratings::Rating::new(0, 1, 2.0),
            ],
            None,
        )
        .unwrap();
        let (model, _) = train_als(&r, &config(2, 0.5, 3)).unwrap();
        assert_eq!(model.user_factors.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn full_rank_fit_is_exact() {
        // 4x3 full matrix with k = min(m, n) = 3 and no regularization
        let vals = [[5.0, 3.0, 1.0], [4.0, 1.0, 2.0], [1.0, 2.0, 5.0], [2.0, 4.0, 3.0]];
        let mut t = Vec::new();
        for (u, row) in vals.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                t.push((u as u32, i as u32, v));
            }
        }
        let r = build_ratings(t).unwrap();
        let (_, trace) = train_als(&r, &config(3, 0.0, 1)).unwrap();
        assert!(trace.final_objective() < 1e-12, "{}", trace.final_objective());
    }
}
