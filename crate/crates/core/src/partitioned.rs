//! Block-partitioned ALS.
//!
//! The rating matrix is split into row blocks `R_1..R_N` (contiguous user
//! ranges balanced by rating count). Every sync round:
//!
//! 1. the current global item factors `Q` are broadcast to all partitions;
//! 2. each partition solves its own users' rows `P_i` exactly;
//! 3. each partition accumulates, per item, the Gram matrix and right-hand
//!    side of the item normal equations over its local ratings only, and
//!    solves them into a local `Q_i` (so `R_i ~ P_i Q_i^T` on its own);
//! 4. the merge sums the partial Gram matrices and right-hand sides across
//!    partitions and solves the global item step.
//!
//! Because the merge rebuilds the exact global normal equations, the merged
//! `Q` is the serial ALS item step and the result does not depend on `N`.

use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::factorization::{
    converged, objective_unchecked, FactorMatrix, FactorModel, Optimizer, TraceKind, TrainConfig, TrainTrace,
};
use crate::linalg::{accumulate, dot, packed_len, ridge_solve};
use crate::par;
use crate::ratings::RatingsMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub num_partitions: usize,
    /// Partition of every user.
    pub assignment: Vec<u32>,
    /// Half-open user range `[start, end)` of every partition.
    pub ranges: Vec<(u32, u32)>,
    /// Ratings per partition.
    pub loads: Vec<usize>,
}

impl PartitionPlan {
    /// `(max - min) / max` of the partition loads.
    pub fn imbalance(&self) -> f64 {
        let max = self.loads.iter().copied().max().unwrap_or(0);
        let min = self.loads.iter().copied().min().unwrap_or(0);
        if max == 0 {
            0.0
        } else {
            (max - min) as f64 / max as f64
        }
    }
}

/// Splits users into `n` contiguous ranges of roughly equal rating count.
///
/// `n` larger than the number of users is clamped (with a warning). Each
/// submatrix holds its users' ratings over all items, in the parent's id space.
pub fn partition(train: &RatingsMatrix, n: usize) -> Result<(PartitionPlan, Vec<RatingsMatrix>)> {
    if n < 1 {
        return Err(Error::InvalidParameter("number of partitions must be >= 1".into()));
    }
    let users = train.num_users();
    let n_eff = n.min(users.max(1));
    if n_eff < n {
        log::warn!("{n} partitions requested for {users} users; using {n_eff}");
    }
    let total = train.len();
    let mut prefix = Vec::with_capacity(users + 1);
    prefix.push(0usize);
    for u in 0..users as u32 {
        prefix.push(prefix[prefix.len() - 1] + train.user_degree(u));
    }

    // cut p sits at the user boundary whose prefix load is closest to p * total / n,
    // keeping at least one user per partition
    let mut cuts = vec![0usize];
    for p in 1..n_eff {
        let target = total as f64 * p as f64 / n_eff as f64;
        let lo = cuts[p - 1] + 1;
        let hi = users - (n_eff - p);
        let best = (lo..=hi)
            .min_by(|&a, &b| {
                let da = (prefix[a] as f64 - target).abs();
                let db = (prefix[b] as f64 - target).abs();
                da.total_cmp(&db)
            })
            .unwrap_or(lo);
        cuts.push(best);
    }
    cuts.push(users);

    let mut assignment = vec![0u32; users];
    let mut ranges = Vec::with_capacity(n_eff);
    let mut loads = Vec::with_capacity(n_eff);
    let mut subs = Vec::with_capacity(n_eff);
    for p in 0..n_eff {
        let (a, b) = (cuts[p], cuts[p + 1]);
        assignment[a..b].iter_mut().for_each(|x| *x = p as u32);
        ranges.push((a as u32, b as u32));
        loads.push(prefix[b] - prefix[a]);
        let entries = train
            .entries()
            .iter()
            .filter(|r| (a..b).contains(&(r.user as usize)))
            .copied()
            .collect();
        subs.push(train.restrict(entries)?);
    }
    Ok((
        PartitionPlan {
            num_partitions: n_eff,
            assignment,
            ranges,
            loads,
        },
        subs,
    ))
}

/// Item-side normal equation terms of one partition.
struct PartialNormals {
    /// Items rated in this partition, ascending.
    items: Vec<u32>,
    /// Packed Gram matrices, `packed_len(k)` per listed item.
    grams: Vec<f64>,
    /// Right-hand sides, `k` per listed item.
    rhs: Vec<f64>,
}

fn partial_normals(sub: &RatingsMatrix, p: &FactorMatrix) -> PartialNormals {
    let k = p.cols();
    let g = packed_len(k);
    let items: Vec<u32> = (0..sub.num_items() as u32)
        .filter(|&i| sub.item_degree(i) > 0)
        .collect();
    let mut grams = vec![0.0; items.len() * g];
    let mut rhs = vec![0.0; items.len() * k];
    for (slot, &i) in items.iter().enumerate() {
        let (gram, b) = (&mut grams[slot * g..(slot + 1) * g], &mut rhs[slot * k..(slot + 1) * k]);
        for (u, r) in sub.item_column(i).iter() {
            accumulate(gram, b, p.row(u as usize), r);
        }
    }
    PartialNormals { items, grams, rhs }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionedTrace {
    pub plan: PartitionPlan,
    /// Objective at start and after every user step and merged item step.
    pub train: TrainTrace,
    /// Wall-clock time of every sync round.
    pub round_times: Vec<Duration>,
    /// Per round, per partition: RMSE of `R_i ~ P_i Q_i^T` with the local
    /// item factors.
    pub local_rmse: Vec<Vec<f64>>,
}

/// Local state a partition produces in one round.
struct PartitionRound {
    normals: PartialNormals,
    local_rmse: f64,
}

/// Block-synchronous ALS over `n` user partitions. Requires the ALS optimizer.
pub fn train_partitioned(
    train: &RatingsMatrix,
    n: usize,
    config: &TrainConfig,
    sync_rounds: usize,
) -> Result<(FactorModel, PartitionedTrace)> {
    config.validate()?;
    if config.optimizer != Optimizer::Als {
        return Err(Error::InvalidParameter(
            "partitioned training supports the ALS optimizer only".into(),
        ));
    }
    if train.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let (plan, subs) = partition(train, n)?;
    let k = config.rank;
    let g = packed_len(k);
    let lambda = config.lambda;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = FactorModel::init(train, config, &mut rng);
    let mut trace = TrainTrace::new(TraceKind::PerHalfStep, objective_unchecked(&model, train));
    let mut round_times = Vec::new();
    let mut local_rmse = Vec::new();

    for round in 0..sync_rounds {
        let clock = Clock::start();
        let before = *trace.objective.last().unwrap();

        // (1) + (2): partitions solve their own user rows against the broadcast Q
        let q = &model.item_factors;
        let blocks: Vec<(Vec<f64>, usize)> = par::map_collect(subs.len(), |p| {
            let (a, b) = plan.ranges[p];
            let mut rows = vec![0.0; (b - a) as usize * k];
            let mut jitter = 0;
            for (slot, u) in (a..b).enumerate() {
                if crate::factorization::als::solve_row(
                    subs[p].user_row(u),
                    q,
                    lambda,
                    &mut rows[slot * k..(slot + 1) * k],
                ) {
                    jitter += 1;
                }
            }
            (rows, jitter)
        });
        for (p, (rows, jitter)) in blocks.into_iter().enumerate() {
            let a = plan.ranges[p].0 as usize;
            model.user_factors.as_mut_slice()[a * k..a * k + rows.len()].copy_from_slice(&rows);
            trace.jitter_events += jitter;
        }
        trace.objective.push(objective_unchecked(&model, train));

        // (3): local item normal equations and local item solves
        let p_all = &model.user_factors;
        let rounds: Vec<PartitionRound> = par::map_collect(subs.len(), |p| {
            let sub = &subs[p];
            let normals = partial_normals(sub, p_all);
            let mut local_q = FactorMatrix::zeros(sub.num_items(), k);
            let mut scratch = Vec::new();
            for (slot, &i) in normals.items.iter().enumerate() {
                ridge_solve(
                    &normals.grams[slot * g..(slot + 1) * g],
                    &normals.rhs[slot * k..(slot + 1) * k],
                    lambda,
                    &mut scratch,
                    local_q.row_mut(i as usize),
                );
            }
            let sq: f64 = sub
                .entries()
                .iter()
                .map(|r| {
                    let e = r.value - dot(p_all.row(r.user as usize), local_q.row(r.item as usize));
                    e * e
                })
                .sum();
            PartitionRound {
                normals,
                local_rmse: (sq / sub.len().max(1) as f64).sqrt(),
            }
        });
        local_rmse.push(rounds.iter().map(|r| r.local_rmse).collect());

        // (4): merge by summing partial normal equations, then solve globally
        let items = train.num_items();
        let mut grams = vec![0.0; items * g];
        let mut rhs = vec![0.0; items * k];
        for r in &rounds {
            for (slot, &i) in r.normals.items.iter().enumerate() {
                let i = i as usize;
                for (dst, src) in grams[i * g..(i + 1) * g]
                    .iter_mut()
                    .zip(&r.normals.grams[slot * g..(slot + 1) * g])
                {
                    *dst += src;
                }
                for (dst, src) in rhs[i * k..(i + 1) * k]
                    .iter_mut()
                    .zip(&r.normals.rhs[slot * k..(slot + 1) * k])
                {
                    *dst += src;
                }
            }
        }
        drop(rounds);
        let mut scratch = Vec::new();
        for i in 0..items {
            if ridge_solve(
                &grams[i * g..(i + 1) * g],
                &rhs[i * k..(i + 1) * k],
                lambda,
                &mut scratch,
                model.item_factors.row_mut(i),
            ) {
                trace.jitter_events += 1;
            }
        }
        let after = objective_unchecked(&model, train);
        trace.objective.push(after);
        trace.epochs_run = round + 1;
        round_times.push(clock.elapsed());
        if !after.is_finite() {
            return Err(Error::Diverged {
                epoch: round,
                trace: trace.objective,
            });
        }
        if converged(before, after, config.convergence_tol) {
            trace.stopped_early = round + 1 < sync_rounds;
            break;
        }
    }
    Ok((
        model,
        PartitionedTrace {
            plan,
            train: trace,
            round_times,
            local_rmse,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorization::train_als;
    use crate::ratings::build_ratings;

    fn sample(users: u32, items: u32) -> RatingsMatrix {
        let mut t = Vec::new();
        for u in 0..users {
            for i in 0..items {
                if (u * 13 + i * 7) % 5 < 3 {
                    t.push((u, i, ((u * 3 + i) % 5 + 1) as f64));
                }
            }
        }
        build_ratings(t).unwrap()
    }

    fn als(rank: usize) -> TrainConfig {
        TrainConfig {
            optimizer: Optimizer::Als,
            epochs: 4,
            lambda: 0.1,
            rank,
            seed: 9,
            convergence_tol: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn single_partition_is_identity() {
        let r = sample(10, 6);
        let (plan, subs) = partition(&r, 1).unwrap();
        assert_eq!(plan.ranges, vec![(0, 10)]);
        assert_eq!(subs[0], r);
    }

    #[test]
    fn equal_users_split_evenly() {
        let r = build_ratings((0..4u32).flat_map(|u| (0..3u32).map(move |i| (u, i, 3.0)))).unwrap();
        let (plan, _) = partition(&r, 2).unwrap();
        assert_eq!(plan.ranges, vec![(0, 2), (2, 4)]);
        assert_eq!(plan.loads, vec![6, 6]);
    }

    #[test]
    fn partitions_cover_train() {
        let r = sample(23, 11);
        for n in 1..=6 {
            let (plan, subs) = partition(&r, n).unwrap();
            let mut all: Vec<_> = subs.iter().flat_map(|s| s.entries().to_vec()).collect();
            all.sort_by_key(|e| (e.user, e.item));
            assert_eq!(all, r.entries());
            // each cut lands within one user's ratings of its ideal position
            let max_degree = (0..23).map(|u| r.user_degree(u)).max().unwrap();
            let ideal = r.len() as f64 / n as f64;
            for &load in &plan.loads {
                assert!(
                    (load as f64 - ideal).abs() <= 2.0 * max_degree as f64,
                    "n={n} {:?}",
                    plan.loads
                );
            }
        }
    }

    #[test]
    fn too_many_partitions_are_clamped() {
        let r = sample(3, 4);
        let (plan, subs) = partition(&r, 8).unwrap();
        assert_eq!(plan.num_partitions, 3);
        assert_eq!(subs.len(), 3);
    }

    #[test]
    fn one_partition_matches_serial_bit_for_bit() {
        let r = sample(15, 9);
        let cfg = als(3);
        let (serial, st) = train_als(&r, &cfg).unwrap();
        let (part, pt) = train_partitioned(&r, 1, &cfg, cfg.epochs).unwrap();
        assert_eq!(part, serial);
        assert_eq!(pt.train.objective, st.objective);
    }

    #[test]
    fn many_partitions_match_serial() {
        let r = sample(30, 12);
        let cfg = als(4);
        let (serial, _) = train_als(&r, &cfg).unwrap();
        for n in [2, 3, 7] {
            let (part, trace) = train_partitioned(&r, n, &cfg, cfg.epochs).unwrap();
            assert!(part.user_factors.max_abs_diff(&serial.user_factors) < 1e-9);
            assert!(part.item_factors.max_abs_diff(&serial.item_factors) < 1e-9);
            assert_eq!(trace.local_rmse.len(), cfg.epochs);
            assert_eq!(trace.local_rmse[0].len(), n);
        }
    }

    #[test]
    fn sgd_is_rejected() {
        let r = sample(5, 5);
        let cfg = TrainConfig {
            optimizer: Optimizer::Sgd,
            ..als(2)
        };
        assert!(train_partitioned(&r, 2, &cfg, 1).is_err());
    }
}
