use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::models::{fit, FitContext, Predictor};
use super::report::{EvalReport, EvalRow};
use super::tune::{tune, TuneGrid};
use super::{mae, rmse, Algorithm, Dataset, ModelParams};
use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::ratings::{mask, split, RatingsMatrix, SparsityLevel, SplitSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    pub grid: TuneGrid,
    pub folds: usize,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            grid: TuneGrid::default(),
            folds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub algorithms: Vec<Algorithm>,
    /// Retained fractions of the training ratings.
    pub retained: Vec<f64>,
    /// One split (and model seed) per value.
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    pub params: ModelParams,
    /// When set, every (seed, sparsity) cell is tuned by cross-validation on
    /// its masked training matrix before fitting.
    pub tuning: Option<TuningConfig>,
    /// Fit every algorithm once on a small slice and run a short prediction
    /// pass before timing.
    pub warmup: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithms: vec![Algorithm::BaselineCf, Algorithm::Mf, Algorithm::Hybrid, Algorithm::Ann],
            retained: vec![0.8, 0.5, 0.2],
            seeds: vec![0, 1, 2],
            test_fraction: 0.2,
            params: ModelParams::default(),
            tuning: None,
            warmup: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::InvalidParameter("no algorithms selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("at least one seed is required".into()));
        }
        if self.retained.is_empty() {
            return Err(Error::InvalidParameter("no sparsity levels given".into()));
        }
        for &f in &self.retained {
            SparsityLevel::retained(f)?;
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if let Some(t) = &self.tuning {
            if t.folds < 2 {
                return Err(Error::InvalidParameter("tuning needs at least 2 folds".into()));
            }
        }
        self.params.validate()
    }
}

const WARMUP_RATINGS: usize = 2000;
const WARMUP_PREDICTIONS: usize = 500;

/// Runs every (seed, sparsity, algorithm) cell.
///
/// Per seed the 8:2 split is drawn once; per sparsity level the training
/// part is masked once; every algorithm of that cell sees the same
/// realization, and mf, hybrid and ann share one factor model. Abstentions
/// are scored as the global training mean. Model seeds follow the cell seed.
pub fn run_experiment(dataset: &Dataset, config: &ExperimentConfig) -> Result<EvalReport> {
    config.validate()?;
    let features = dataset.features.as_deref();
    if config.warmup {
        warm_up(dataset, config)?;
    }
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let spec = SplitSpec {
            test_fraction: config.test_fraction,
            seed,
            stratify_by_user: true,
        };
        let (train_full, test) = split(&dataset.ratings, &spec)?;
        for &retained in &config.retained {
            let level = SparsityLevel::retained(retained)?;
            let cell = |e: Error| e.context(format!("sparsity {}, seed {seed}", level.sparsity()));
            let train = mask(&train_full, level, seed).map_err(cell)?;
            let mut params = config.params;
            params.mf.seed = seed;
            params.lsh.seed = seed;
            let tuned = config.tuning.is_some();
            if let Some(t) = &config.tuning {
                params = tune(&train, features, &config.algorithms, &params, &t.grid, t.folds, seed)
                    .map_err(|e| cell(e.context("tuning")))?
                    .best;
            }
            let mut ctx = FitContext::new(&train, features);
            for &algorithm in &config.algorithms {
                let row = evaluate_cell(&mut ctx, algorithm, &params, &test, config.warmup)
                    .map_err(|e| cell(e).context(format!("algorithm {algorithm}")))?;
                rows.push(EvalRow {
                    algorithm: algorithm.to_string(),
                    dataset: dataset.name.clone(),
                    sparsity: level.sparsity(),
                    retained_fraction: level.retained_fraction(),
                    seed,
                    hyperparameters: params.describe(algorithm).to_string(),
                    extra: {
                        let mut extra = row.extra;
                        extra.insert("tuned".into(), json!(tuned));
                        Value::Object(extra).to_string()
                    },
                    ..row.row
                });
            }
        }
    }
    let report = EvalReport::new(rows);
    report.validate()?;
    Ok(report)
}

struct CellResult {
    row: EvalRow,
    extra: serde_json::Map<String, Value>,
}

fn evaluate_cell(
    ctx: &mut FitContext<'_>,
    algorithm: Algorithm,
    params: &ModelParams,
    test: &RatingsMatrix,
    warmup: bool,
) -> Result<CellResult> {
    let fitted = fit(ctx, algorithm, params)?;
    let fallback = ctx.train.global_mean().unwrap_or(ctx.train.scale().midpoint());
    let entries = test.entries();
    if warmup {
        let sink: f64 = entries
            .iter()
            .take(WARMUP_PREDICTIONS)
            .filter_map(|r| fitted.predictor.predict(r.user, r.item))
            .sum();
        std::hint::black_box(sink);
    }
    let start = Clock::start();
    let predictions: Vec<Option<f64>> = entries
        .iter()
        .map(|r| fitted.predictor.predict(r.user, r.item))
        .collect();
    let predict_time = start.elapsed();

    let abstained = predictions.iter().filter(|p| p.is_none()).count();
    let pairs: Vec<(f64, f64)> = predictions
        .iter()
        .zip(entries)
        .map(|(p, r)| (p.unwrap_or(fallback), r.value))
        .collect();
    let mut extra = fitted.extra;
    extra.insert(
        "abstain_rate".into(),
        json!(abstained as f64 / entries.len().max(1) as f64),
    );
    if let Predictor::Hybrid(m) = &fitted.predictor {
        let content_only = entries
            .iter()
            .filter(|r| m.predict_detailed(r.user, r.item).alpha_used == 0.0 && m.config.alpha > 0.0)
            .count();
        extra.insert(
            "content_only_rate".into(),
            json!(content_only as f64 / entries.len().max(1) as f64),
        );
    }
    Ok(CellResult {
        row: EvalRow {
            algorithm: String::new(),
            dataset: String::new(),
            sparsity: 0.0,
            retained_fraction: 0.0,
            seed: 0,
            rmse: rmse(&pairs)?,
            mae: mae(&pairs)?,
            train_time_s: fitted.train_time.as_secs_f64(),
            predict_time_s: predict_time.as_secs_f64(),
            hyperparameters: String::new(),
            extra: String::new(),
        },
        extra,
    })
}

/// Untimed fits on a small slice so that first-cell timings do not include
/// one-off costs such as thread-pool start-up and page faults.
fn warm_up(dataset: &Dataset, config: &ExperimentConfig) -> Result<()> {
    let entries: Vec<_> = dataset.ratings.entries().iter().take(WARMUP_RATINGS).copied().collect();
    if entries.is_empty() {
        return Ok(());
    }
    let slice = dataset.ratings.restrict(entries)?;
    let mut params = config.params;
    params.mf.epochs = params.mf.epochs.min(2);
    let mut ctx = FitContext::new(&slice, dataset.features.as_deref());
    for &a in &config.algorithms {
        let fitted = fit(&mut ctx, a, &params)?;
        for r in slice.entries().iter().take(WARMUP_PREDICTIONS) {
            std::hint::black_box(fitted.predictor.predict(r.user, r.item));
        }
    }
    Ok(())
}
