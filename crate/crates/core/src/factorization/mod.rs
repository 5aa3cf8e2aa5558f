//! Regularized matrix factorization `R ~ P Q^T`.
//!
//! Both trainers minimize
//!
//! ```text
//! L = sum_{(i,j) in K} (R_ij - P_i . Q_j)^2 + lambda (|P|_F^2 + |Q|_F^2)
//! ```
//!
//! over the observed entries `K`, either by stochastic gradient descent
//! ([`train_sgd`]) or by alternating exact ridge solves ([`train_als`]).
//! There are no bias terms; entities without training ratings fall back to
//! the global training mean at prediction time.

pub(crate) mod als;
mod io;
mod sgd;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::ratings::{RatingScale, RatingsMatrix};

pub use als::{als_item_step, als_user_step, train_als};
pub use io::{read_model, write_model};
pub use sgd::{entry_gradient, entry_objective, train_sgd};

/// Dense row-major factor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FactorMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(FactorMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &FactorMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn random(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let bound = scale / (cols as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        FactorMatrix { rows, cols, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Als,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "als" => Ok(Optimizer::Als),
            other => Err(Error::InvalidParameter(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Als => "als",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    /// SGD epochs or ALS sweeps.
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub rank: usize,
    pub init_scale: f64,
    pub seed: u64,
    /// Stop once the relative objective decrease of an epoch falls below
    /// this value. Zero disables early stopping.
    pub convergence_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Sgd,
            epochs: 100,
            learning_rate: 0.005,
            lambda: 0.05,
            rank: 32,
            init_scale: 0.1,
            seed: 0,
            convergence_tol: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.rank < 1 {
            return bad("rank k must be >= 1");
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return bad("lambda must be >= 0");
        }
        if self.optimizer == Optimizer::Sgd && (self.learning_rate.is_nan() || self.learning_rate <= 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.init_scale.is_nan() || self.init_scale <= 0.0 {
            return bad("init_scale must be > 0");
        }
        if self.convergence_tol.is_nan() || self.convergence_tol < 0.0 {
            return bad("convergence_tol must be >= 0");
        }
        Ok(())
    }
}

/// Learned factors plus what is needed to serve predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub user_factors: FactorMatrix,
    pub item_factors: FactorMatrix,
    pub lambda: f64,
    pub seed: u64,
    pub global_mean: f64,
    pub scale: RatingScale,
    /// Whether each user had at least one training rating.
    pub user_known: Vec<bool>,
    pub item_known: Vec<bool>,
}

impl FactorModel {
    pub(crate) fn init(train: &RatingsMatrix, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Self {
        let user_factors = FactorMatrix::random(train.num_users(), config.rank, config.init_scale, rng);
        let item_factors = FactorMatrix::random(train.num_items(), config.rank, config.init_scale, rng);
        FactorModel {
            user_factors,
            item_factors,
            lambda: config.lambda,
            seed: config.seed,
            global_mean: train.global_mean().unwrap_or(train.scale().midpoint()),
            scale: train.scale(),
            user_known: (0..train.num_users() as u32)
                .map(|u| train.user_degree(u) > 0)
                .collect(),
            item_known: (0..train.num_items() as u32)
                .map(|i| train.item_degree(i) > 0)
                .collect(),
        }
    }

    pub fn rank(&self) -> usize {
        self.user_factors.cols()
    }

    pub fn num_users(&self) -> usize {
        self.user_factors.rows()
    }

    pub fn num_items(&self) -> usize {
        self.item_factors.rows()
    }

    /// Unclamped `P_u . Q_i`, `None` outside the trained id space.
    pub fn score(&self, user: u32, item: u32) -> Option<f64> {
        let (u, i) = (user as usize, item as usize);
        if u >= self.num_users() || i >= self.num_items() {
            return None;
        }
        Some(dot(self.user_factors.row(u), self.item_factors.row(i)))
    }

    /// `P_u . Q_i` clamped to the rating scale. Users or items that had no
    /// training ratings (or lie outside the id space) get the global mean.
    pub fn predict(&self, user: u32, item: u32) -> f64 {
        let (u, i) = (user as usize, item as usize);
        let known =
            self.user_known.get(u).copied().unwrap_or(false) && self.item_known.get(i).copied().unwrap_or(false);
        match self.score(user, item) {
            Some(s) if known => self.scale.clamp(s),
            _ => self.global_mean,
        }
    }
}

/// Which points of training a [`TrainTrace`] records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    /// Initial objective, then one value per SGD epoch.
    PerEpoch,
    /// Initial objective, then user step and item step of every ALS sweep.
    PerHalfStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub kind: TraceKind,
    pub objective: Vec<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Number of ridge solves that needed diagonal jitter.
    pub jitter_events: usize,
}

impl TrainTrace {
    pub(crate) fn new(kind: TraceKind, initial: f64) -> Self {
        TrainTrace {
            kind,
            objective: vec![initial],
            epochs_run: 0,
            stopped_early: false,
            jitter_events: 0,
        }
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective.last().unwrap_or(&f64::NAN)
    }
}

/// True once an epoch improved the objective by less than `tol` (relative).
pub(crate) fn converged(previous: f64, current: f64, tol: f64) -> bool {
    if tol <= 0.0 {
        return false;
    }
    let base = previous.abs().max(f64::MIN_POSITIVE);
    (previous - current) / base < tol
}

/// The squared-error plus Frobenius-penalty objective on `train`.
pub fn objective(model: &FactorModel, train: &RatingsMatrix) -> Result<f64> {
    if model.num_users() != train.num_users() || model.num_items() != train.num_items() {
        return Err(Error::DimensionMismatch(format!(
            "model is {}x{}, ratings are {}x{}",
            model.num_users(),
            model.num_items(),
            train.num_users(),
            train.num_items()
        )));
    }
    Ok(objective_unchecked(model, train))
}

pub(crate) fn objective_unchecked(model: &FactorModel, train: &RatingsMatrix) -> f64 {
    let residual: f64 = train
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
    residual + model.lambda * (model.user_factors.squared_norm() + model.item_factors.squared_norm())
}

/// Trains with the optimizer selected in `config`.
pub fn train(train: &RatingsMatrix, config: &TrainConfig) -> Result<(FactorModel, TrainTrace)> {
    match config.optimizer {
        Optimizer::Sgd => train_sgd(train, config),
        Optimizer::Als => train_als(train, config),
    }
}

/// Observed cells keep their rating; every other cell is filled by the model.
#[derive(Debug, Clone, Copy)]
pub struct CompletedMatrix<'a> {
    model: &'a FactorModel,
    observed: &'a RatingsMatrix,
}

pub fn complete<'a>(model: &'a FactorModel, observed: &'a RatingsMatrix) -> CompletedMatrix<'a> {
    CompletedMatrix { model, observed }
}

impl CompletedMatrix<'_> {
    pub fn get(&self, user: u32, item: u32) -> f64 {
        self.observed
            .get(user, item)
            .unwrap_or_else(|| self.model.predict(user, item))
    }

    /// Row-major dense `num_users x num_items` matrix.
    pub fn to_dense(&self) -> Vec<f64> {
        let (m, n) = (self.observed.num_users(), self.observed.num_items());
        let mut out = Vec::with_capacity(m * n);
        for u in 0..m as u32 {
            for i in 0..n as u32 {
                out.push(self.get(u, i));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratings::build_ratings;

    fn model_1x1(p: f64, q: f64, lambda: f64, train: &RatingsMatrix) -> FactorModel {
        FactorModel {
            user_factors: FactorMatrix::from_vec(1, 1, vec![p]).unwrap(),
            item_factors: FactorMatrix::from_vec(1, 1, vec![q]).unwrap(),
            lambda,
            seed: 0,
            global_mean: 3.0,
            scale: train.scale(),
            user_known: vec![true],
            item_known: vec![true],
        }
    }

    #[test]
    fn objective_hand_values() {
        let train = build_ratings(vec![(0, 0, 3.0)]).unwrap();
        assert_eq!(objective(&model_1x1(0.0, 0.0, 0.0, &train), &train).unwrap(), 9.0);
        assert_eq!(objective(&model_1x1(1.0, 1.0, 0.5, &train), &train).unwrap(), 5.0);
        let fit = model_1x1(3.0_f64.sqrt(), 3.0_f64.sqrt(), 0.0, &train);
        assert!(objective(&fit, &train).unwrap() < 1e-24);
    }

    #[test]
    fn objective_dimension_check() {
        let train = build_ratings(vec![(1, 0, 3.0)]).unwrap();
        let m = model_1x1(1.0, 1.0, 0.0, &train);
        assert!(matches!(objective(&m, &train), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn prediction_fallbacks() {
        let train = build_ratings(vec![(0, 0, 1.0), (0, 1, 5.0)]).unwrap();
        let mut m = model_1x1(0.0, 0.0, 0.0, &train);
        m.item_factors = FactorMatrix::zeros(2, 1);
        m.item_known = vec![true, true];
        // unknown user
        assert_eq!(m.predict(7, 0), 3.0);
        // warm user with a zero factor row clamps 0 to the scale minimum
        assert_eq!(m.predict(0, 0), 1.0);
        m.user_known[0] = false;
        assert_eq!(m.predict(0, 0), 3.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            rank: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lambda: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
