use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::models::{fit, FitContext, Predictor};
use super::{rmse, Algorithm, ModelParams};
use crate::error::{Error, Result};
use crate::hybrid::{tune_alpha, CfBackend};
use crate::ratings::{Rating, RatingsMatrix};

/// Values to try per hyperparameter; an empty list keeps the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneGrid {
    /// Latent dimension `k`.
    pub rank: Vec<usize>,
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub num_tables: Vec<usize>,
    pub bits_per_table: Vec<usize>,
}

impl Default for TuneGrid {
    fn default() -> Self {
        TuneGrid {
            rank: vec![16, 32],
            lambda: vec![0.05, 0.1],
            alpha: vec![0.0, 0.25, 0.5, 0.75, 0.9, 0.95, 1.0],
            num_tables: Vec::new(),
            bits_per_table: Vec::new(),
        }
    }
}

impl TuneGrid {
    /// A grid that only evaluates `base`.
    pub fn singleton() -> Self {
        TuneGrid {
            rank: Vec::new(),
            lambda: Vec::new(),
            alpha: Vec::new(),
            num_tables: Vec::new(),
            bits_per_table: Vec::new(),
        }
    }
}

fn or_base<T: Copy>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// Validation RMSE of one grid cell across folds. Fields that do not apply
/// to the algorithm are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub algorithm: Algorithm,
    pub rank: Option<usize>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub num_tables: Option<usize>,
    pub bits_per_table: Option<usize>,
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best: ModelParams,
    pub table: Vec<TuneRow>,
}

/// Deterministic fold of each of `n` entries: a seeded permutation dealt
/// round-robin, so fold sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &e) in order.iter().enumerate() {
        fold[e] = pos % folds.max(1);
    }
    fold
}

type RowKey = (
    Algorithm,
    Option<usize>,
    Option<u64>,
    Option<u64>,
    Option<usize>,
    Option<usize>,
);

fn key(row: &TuneRow) -> RowKey {
    (
        row.algorithm,
        row.rank,
        row.lambda.map(f64::to_bits),
        row.alpha.map(f64::to_bits),
        row.num_tables,
        row.bits_per_table,
    )
}

struct Collector {
    order: Vec<RowKey>,
    rows: BTreeMap<RowKey, TuneRow>,
}

impl Collector {
    fn push(&mut self, template: TuneRow, value: f64) {
        let k = key(&template);
        let row = self.rows.entry(k).or_insert_with(|| {
            self.order.push(k);
            template
        });
        row.fold_rmse.push(value);
    }
}

fn validation_rmse(predictor: &Predictor, validation: &[Rating], fallback: f64) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = validation
        .iter()
        .map(|r| (predictor.predict(r.user, r.item).unwrap_or(fallback), r.value))
        .collect();
    rmse(&pairs)
}

/// k-fold cross-validation over `grid` on `train` (the training portion only).
///
/// Factor-based algorithms share one factor model per `(k, lambda)` cell and
/// fold. The factor cell is chosen by mf's mean validation RMSE (or by
/// hybrid's, then ann's, when mf is not requested); `alpha` and the LSH
/// parameters are then chosen at that cell. Ties keep the earlier grid value,
/// except `alpha`, where they go to the larger value. Neighborhood baselines
/// have no grid dimension and keep their base parameters.
pub fn tune(
    train: &RatingsMatrix,
    features: Option<&[Vec<f64>]>,
    algorithms: &[Algorithm],
    base: &ModelParams,
    grid: &TuneGrid,
    folds: usize,
    seed: u64,
) -> Result<TuneOutcome> {
    if folds < 2 {
        return Err(Error::InvalidParameter("tuning needs at least 2 folds".into()));
    }
    if train.len() < folds {
        return Err(Error::InvalidParameter(format!(
            "{} ratings cannot be split into {folds} folds",
            train.len()
        )));
    }
    base.validate()?;
    let ranks = or_base(&grid.rank, base.mf.rank);
    let lambdas = or_base(&grid.lambda, base.mf.lambda);
    let alphas = or_base(&grid.alpha, base.hybrid.alpha);
    let tables = or_base(&grid.num_tables, base.lsh.num_tables);
    let bits = or_base(&grid.bits_per_table, base.lsh.bits_per_table);
    let has = |a| algorithms.contains(&a);
    let hybrid_on_factors = has(Algorithm::Hybrid) && base.hybrid.cf_backend == CfBackend::Factorization;

    let assignment = fold_assignment(train.len(), folds, seed);
    let mut out = Collector {
        order: Vec::new(),
        rows: BTreeMap::new(),
    };
    let row = |algorithm, rank, lambda, alpha, num_tables, bits_per_table| TuneRow {
        algorithm,
        rank,
        lambda,
        alpha,
        num_tables,
        bits_per_table,
        fold_rmse: Vec::new(),
        mean_rmse: f64::NAN,
    };

    for f in 0..folds {
        let (mut fit_entries, mut val) = (Vec::new(), Vec::new());
        for (e, r) in train.entries().iter().enumerate() {
            if assignment[e] == f {
                val.push(*r);
            } else {
                fit_entries.push(*r);
            }
        }
        let fit_train = train.restrict(fit_entries)?;
        let val_matrix = train.restrict(val.clone())?;
        let fallback = fit_train.global_mean().unwrap_or(train.scale().midpoint());

        for &rank in &ranks {
            for &lambda in &lambdas {
                if !(has(Algorithm::Mf) || hybrid_on_factors || has(Algorithm::Ann)) {
                    continue;
                }
                let mut params = *base;
                params.mf.rank = rank;
                params.mf.lambda = lambda;
                let mut ctx = FitContext::new(&fit_train, features);
                if has(Algorithm::Mf) {
                    let m = fit(&mut ctx, Algorithm::Mf, &params)?;
                    out.push(
                        row(Algorithm::Mf, Some(rank), Some(lambda), None, None, None),
                        validation_rmse(&m.predictor, &val, fallback)?,
                    );
                }
                if hybrid_on_factors {
                    hybrid_rows(&mut out, &mut ctx, &params, &val_matrix, &alphas, Some((rank, lambda)))?;
                }
                if has(Algorithm::Ann) {
                    for &l in &tables {
                        for &b in &bits {
                            let mut p = params;
                            p.lsh.num_tables = l;
                            p.lsh.bits_per_table = b;
                            let m = fit(&mut ctx, Algorithm::Ann, &p)?;
                            out.push(
                                row(Algorithm::Ann, Some(rank), Some(lambda), None, Some(l), Some(b)),
                                validation_rmse(&m.predictor, &val, fallback)?,
                            );
                        }
                    }
                }
            }
        }
        if has(Algorithm::Hybrid) && !hybrid_on_factors {
            let mut ctx = FitContext::new(&fit_train, features);
            hybrid_rows(&mut out, &mut ctx, base, &val_matrix, &alphas, None)?;
        }
    }

    let table: Vec<TuneRow> = out
        .order
        .iter()
        .map(|k| {
            let mut r = out.rows.remove(k).unwrap();
            r.mean_rmse = r.fold_rmse.iter().sum::<f64>() / r.fold_rmse.len() as f64;
            r
        })
        .collect();

    let mut best = *base;
    let argmin = |rows: Vec<&TuneRow>, larger_alpha: bool| -> Option<TuneRow> {
        rows.into_iter()
            .reduce(|b, c| {
                let tie_up = larger_alpha && c.mean_rmse == b.mean_rmse && c.alpha > b.alpha;
                if c.mean_rmse < b.mean_rmse || tie_up {
                    c
                } else {
                    b
                }
            })
            .cloned()
    };
    let of = |a: Algorithm| table.iter().filter(move |r| r.algorithm == a);
    let factor_pick = [Algorithm::Mf, Algorithm::Hybrid, Algorithm::Ann]
        .into_iter()
        .filter(|&a| a != Algorithm::Hybrid || hybrid_on_factors)
        .find_map(|a| argmin(of(a).collect(), false));
    if let Some(pick) = factor_pick {
        best.mf.rank = pick.rank.unwrap();
        best.mf.lambda = pick.lambda.unwrap();
    }
    let at_factor_cell =
        |r: &&TuneRow| r.rank.is_none() || (r.rank == Some(best.mf.rank) && r.lambda == Some(best.mf.lambda));
    if let Some(h) = argmin(of(Algorithm::Hybrid).filter(at_factor_cell).collect(), true) {
        best.hybrid.alpha = h.alpha.unwrap();
    }
    if let Some(a) = argmin(of(Algorithm::Ann).filter(at_factor_cell).collect(), false) {
        best.lsh.num_tables = a.num_tables.unwrap();
        best.lsh.bits_per_table = a.bits_per_table.unwrap();
    }
    Ok(TuneOutcome { best, table })
}

fn hybrid_rows(
    out: &mut Collector,
    ctx: &mut FitContext<'_>,
    params: &ModelParams,
    validation: &RatingsMatrix,
    alphas: &[f64],
    factor_cell: Option<(usize, f64)>,
) -> Result<()> {
    let m = fit(ctx, Algorithm::Hybrid, params)?;
    let Predictor::Hybrid(model) = &m.predictor else {
        unreachable!("hybrid fit returns a hybrid predictor")
    };
    let tuned = tune_alpha(model.as_ref(), validation, alphas)?;
    for (alpha, value) in tuned.table {
        out.push(
            TuneRow {
                algorithm: Algorithm::Hybrid,
                rank: factor_cell.map(|c| c.0),
                lambda: factor_cell.map(|c| c.1),
                alpha: Some(alpha),
                num_tables: None,
                bits_per_table: None,
                fold_rmse: Vec::new(),
                mean_rmse: f64::NAN,
            },
            value,
        );
    }
    Ok(())
}
