//! Experiment engine: metrics, model fitting, sparsity sweeps, k-fold
//! tuning and result tables.

mod experiment;
mod metrics;
mod models;
mod report;
mod tune;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::TrainConfig;
use crate::hybrid::HybridConfig;
use crate::ingest::{parse_item_features, parse_movielens, FeaturesFormat, RatingsFormat};
use crate::lsh::LshConfig;
use crate::neighborhood::SimilarityMetric;
use crate::ratings::RatingsMatrix;

pub use experiment::{run_experiment, ExperimentConfig, TuningConfig};
pub use metrics::{mae, mean_std, rmse};
pub use models::{fit, FitContext, Fitted, Predictor};
pub use report::{aggregate, render_table, AggregateRow, Environment, EvalReport, EvalRow, CSV_HEADER};
pub use tune::{fold_assignment, tune, TuneGrid, TuneOutcome, TuneRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// User-based neighborhood CF.
    BaselineCf,
    /// Item-based neighborhood CF.
    BaselineCfItem,
    Mf,
    Hybrid,
    /// Item-based neighborhood CF over an LSH index of item factors.
    Ann,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::BaselineCf,
        Algorithm::BaselineCfItem,
        Algorithm::Mf,
        Algorithm::Hybrid,
        Algorithm::Ann,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::BaselineCf => "baseline_cf",
            Algorithm::BaselineCfItem => "baseline_cf_item",
            Algorithm::Mf => "mf",
            Algorithm::Hybrid => "hybrid",
            Algorithm::Ann => "ann",
        }
    }

    /// Whether the algorithm is built on a trained factor model.
    pub fn uses_factors(self) -> bool {
        matches!(self, Algorithm::Mf | Algorithm::Hybrid | Algorithm::Ann)
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline_cf" | "baseline_cf_user" => Ok(Algorithm::BaselineCf),
            "baseline_cf_item" => Ok(Algorithm::BaselineCfItem),
            "mf" => Ok(Algorithm::Mf),
            "hybrid" => Ok(Algorithm::Hybrid),
            "ann" => Ok(Algorithm::Ann),
            other => Err(Error::InvalidParameter(format!(
                "unknown algorithm '{other}' (expected baseline_cf, baseline_cf_item, mf, hybrid or ann)"
            ))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeighborhoodParams {
    pub metric: SimilarityMetric,
    /// Neighbor budget `K` at prediction time.
    pub neighbors: usize,
    /// Stored neighbors per entity.
    pub index_size: usize,
}

impl Default for NeighborhoodParams {
    fn default() -> Self {
        NeighborhoodParams {
            metric: SimilarityMetric::cosine(),
            neighbors: 40,
            index_size: 200,
        }
    }
}

/// Hyperparameters of every algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub neighborhood: NeighborhoodParams,
    pub mf: TrainConfig,
    pub hybrid: HybridConfig,
    pub lsh: LshConfig,
    /// Neighbor budget of the LSH-backed item CF.
    pub ann_neighbors: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            neighborhood: NeighborhoodParams::default(),
            mf: TrainConfig::default(),
            hybrid: HybridConfig::default(),
            lsh: LshConfig {
                num_tables: 64,
                bits_per_table: 24,
                ..LshConfig::default()
            },
            ann_neighbors: 40,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.neighborhood.metric.validate()?;
        if self.neighborhood.neighbors < 1 || self.neighborhood.index_size < 1 || self.ann_neighbors < 1 {
            return Err(Error::InvalidParameter("neighbor counts must be >= 1".into()));
        }
        self.mf.validate()?;
        self.hybrid.validate()?;
        self.lsh.validate()
    }

    /// The parameters that shape `algorithm`, as a JSON object.
    pub fn describe(&self, algorithm: Algorithm) -> serde_json::Value {
        use serde_json::json;
        let nb = &self.neighborhood;
        let mf = json!({
            "optimizer": self.mf.optimizer.to_string(),
            "k": self.mf.rank,
            "lambda": self.mf.lambda,
            "learning_rate": self.mf.learning_rate,
            "epochs": self.mf.epochs,
            "init_scale": self.mf.init_scale,
            "convergence_tol": self.mf.convergence_tol,
            "seed": self.mf.seed,
        });
        match algorithm {
            Algorithm::BaselineCf | Algorithm::BaselineCfItem => json!({
                "metric": nb.metric.kind,
                "shrinkage": nb.metric.shrinkage,
                "min_overlap": nb.metric.min_overlap,
                "neighbors": nb.neighbors,
                "index_size": nb.index_size,
            }),
            Algorithm::Mf => mf,
            Algorithm::Hybrid => json!({
                "alpha": self.hybrid.alpha,
                "cf_backend": self.hybrid.cf_backend.to_string(),
                "cold_threshold": self.hybrid.cold_threshold,
                "mf": mf,
            }),
            Algorithm::Ann => json!({
                "num_tables": self.lsh.num_tables,
                "bits_per_table": self.lsh.bits_per_table,
                "lsh_seed": self.lsh.seed,
                "rerank": self.lsh.rerank,
                "neighbors": self.ann_neighbors,
                "index_size": nb.index_size,
                "mf": mf,
            }),
        }
    }
}

/// Ratings plus optional dense item attribute rows.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub ratings: RatingsMatrix,
    pub features: Option<Vec<Vec<f64>>>,
}

impl Dataset {
    /// Loads ratings (lenient: malformed lines are skipped with a warning)
    /// and, if given, item attributes keyed by the same external item ids.
    pub fn load(
        name: &str,
        ratings: &Path,
        format: RatingsFormat,
        features: Option<(&Path, FeaturesFormat)>,
    ) -> Result<Dataset> {
        let parsed = parse_movielens(ratings, format)?;
        if !parsed.invalid.is_empty() {
            log::warn!(
                "{}: skipped {} malformed lines",
                ratings.display(),
                parsed.invalid.len()
            );
        }
        let features = match features {
            Some((path, fmt)) => {
                let f = parse_item_features(path, fmt, &parsed.items)?;
                Some(f.dense(parsed.matrix.num_items()))
            }
            None => None,
        };
        Ok(Dataset {
            name: name.to_string(),
            ratings: parsed.matrix,
            features,
        })
    }
}
