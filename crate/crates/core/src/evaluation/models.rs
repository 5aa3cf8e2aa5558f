use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Map, Value};

use super::{Algorithm, ModelParams};
use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::factorization::{train, FactorModel, TrainConfig};
use crate::hybrid::{CfBackend, CfScorer, HybridModel};
use crate::lsh::{factor_rows, lsh_neighborhood_index};
use crate::neighborhood::{Axis, NeighborhoodModel};
use crate::ratings::RatingsMatrix;

/// A fitted model of any algorithm. `None` from [`Predictor::predict`] is
/// an abstention.
pub enum Predictor {
    Neighborhood(Arc<NeighborhoodModel>),
    Factor(Arc<FactorModel>),
    Hybrid(Box<HybridModel<Box<dyn CfScorer + Send + Sync>>>),
}

impl Predictor {
    pub fn predict(&self, user: u32, item: u32) -> Option<f64> {
        match self {
            Predictor::Neighborhood(m) => m.predict(user, item),
            Predictor::Factor(m) => Some(m.predict(user, item)),
            Predictor::Hybrid(m) => Some(m.predict(user, item)),
        }
    }
}

pub struct Fitted {
    pub predictor: Predictor,
    /// Fit time, including any shared model this one is built on.
    pub train_time: Duration,
    /// Algorithm-specific measurements for the report.
    pub extra: Map<String, Value>,
}

/// One training matrix plus models shared between algorithms fitted on it:
/// the factor model behind mf, hybrid and ann, and the user-based
/// neighborhood model behind baseline_cf and a neighborhood-backed hybrid.
pub struct FitContext<'a> {
    pub train: &'a RatingsMatrix,
    pub features: Option<&'a [Vec<f64>]>,
    factor: Option<(TrainConfig, Arc<FactorModel>, Duration)>,
    user_cf: Option<(ModelParams, Arc<NeighborhoodModel>, Duration)>,
}

impl<'a> FitContext<'a> {
    pub fn new(train: &'a RatingsMatrix, features: Option<&'a [Vec<f64>]>) -> Self {
        FitContext {
            train,
            features,
            factor: None,
            user_cf: None,
        }
    }

    fn factor_model(&mut self, config: &TrainConfig) -> Result<(Arc<FactorModel>, Duration)> {
        match &self.factor {
            Some((c, m, t)) if c == config => Ok((m.clone(), *t)),
            _ => {
                let start = Clock::start();
                let (model, _) = train(self.train, config)?;
                let elapsed = start.elapsed();
                let model = Arc::new(model);
                self.factor = Some((*config, model.clone(), elapsed));
                Ok((model, elapsed))
            }
        }
    }

    fn user_cf(&mut self, params: &ModelParams) -> Result<(Arc<NeighborhoodModel>, Duration)> {
        match &self.user_cf {
            Some((p, m, t)) if p.neighborhood == params.neighborhood => Ok((m.clone(), *t)),
            _ => {
                let nb = &params.neighborhood;
                let start = Clock::start();
                let model =
                    NeighborhoodModel::fit(self.train.clone(), Axis::User, &nb.metric, nb.index_size, nb.neighbors)?;
                let elapsed = start.elapsed();
                let model = Arc::new(model);
                self.user_cf = Some((*params, model.clone(), elapsed));
                Ok((model, elapsed))
            }
        }
    }
}

/// Fits `algorithm` on the context's training matrix.
pub fn fit(ctx: &mut FitContext<'_>, algorithm: Algorithm, params: &ModelParams) -> Result<Fitted> {
    params.validate()?;
    let mut extra = Map::new();
    let (predictor, train_time) = match algorithm {
        Algorithm::BaselineCf => {
            let (m, t) = ctx.user_cf(params)?;
            (Predictor::Neighborhood(m), t)
        }
        Algorithm::BaselineCfItem => {
            let nb = &params.neighborhood;
            let start = Clock::start();
            let m = NeighborhoodModel::fit(ctx.train.clone(), Axis::Item, &nb.metric, nb.index_size, nb.neighbors)?;
            (Predictor::Neighborhood(Arc::new(m)), start.elapsed())
        }
        Algorithm::Mf => {
            let (m, t) = ctx.factor_model(&params.mf)?;
            (Predictor::Factor(m), t)
        }
        Algorithm::Hybrid => {
            let features = ctx
                .features
                .ok_or_else(|| Error::InvalidParameter("the hybrid algorithm needs item features".into()))?
                .to_vec();
            let (cf, base): (Box<dyn CfScorer + Send + Sync>, Duration) = match params.hybrid.cf_backend {
                CfBackend::Factorization => {
                    let (m, t) = ctx.factor_model(&params.mf)?;
                    (Box::new(m), t)
                }
                CfBackend::Neighborhood => {
                    let (m, t) = ctx.user_cf(params)?;
                    (Box::new(m), t)
                }
            };
            let start = Clock::start();
            let model = HybridModel::new(params.hybrid, cf, ctx.train, features)?;
            (Predictor::Hybrid(Box::new(model)), base + start.elapsed())
        }
        Algorithm::Ann => {
            let (mf, base) = ctx.factor_model(&params.mf)?;
            let start = Clock::start();
            let vectors: Vec<_> = factor_rows(&mf.item_factors)
                .into_iter()
                .enumerate()
                .map(|(i, v)| v.filter(|_| ctx.train.item_degree(i as u32) > 0))
                .collect();
            let (index, stats) =
                lsh_neighborhood_index(&vectors, Axis::Item, &params.lsh, params.neighborhood.index_size)?;
            let model = NeighborhoodModel::from_index(ctx.train.clone(), index, params.ann_neighbors);
            extra.insert("candidate_fraction".into(), json!(stats.candidate_fraction));
            extra.insert("mean_candidates".into(), json!(stats.mean_candidates));
            (Predictor::Neighborhood(Arc::new(model)), base + start.elapsed())
        }
    };
    Ok(Fitted {
        predictor,
        train_time,
        extra,
    })
}
