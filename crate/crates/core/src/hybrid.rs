//! Content+CF blending with a content-only path for cold users and items.
//!
//! For a warm pair the prediction is `alpha * cf + (1 - alpha) * content`,
//! clamped to the rating scale. When the user or the item has fewer than
//! `cold_threshold` training ratings (or the CF backend abstains), the
//! content score is used alone.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::FactorModel;
use crate::neighborhood::{dense_cosine, NeighborhoodModel};
use crate::ratings::{RatingScale, RatingsMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfBackend {
    Neighborhood,
    Factorization,
}

impl FromStr for CfBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neighborhood" => Ok(CfBackend::Neighborhood),
            "factorization" | "mf" => Ok(CfBackend::Factorization),
            other => Err(Error::InvalidParameter(format!("unknown CF backend '{other}'"))),
        }
    }
}

impl fmt::Display for CfBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CfBackend::Neighborhood => "neighborhood",
            CfBackend::Factorization => "factorization",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    /// Weight on the CF score.
    pub alpha: f64,
    pub cf_backend: CfBackend,
    /// Minimum training ratings for a user or item to count as warm.
    pub cold_threshold: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            alpha: 0.5,
            cf_backend: CfBackend::Factorization,
            cold_threshold: 1,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Something that scores warm (user, item) pairs. `None` means abstain.
pub trait CfScorer {
    fn cf_score(&self, user: u32, item: u32) -> Option<f64>;
}

impl CfScorer for FactorModel {
    fn cf_score(&self, user: u32, item: u32) -> Option<f64> {
        Some(self.predict(user, item))
    }
}

impl CfScorer for NeighborhoodModel {
    fn cf_score(&self, user: u32, item: u32) -> Option<f64> {
        self.predict(user, item)
    }
}

impl<T: CfScorer + ?Sized> CfScorer for &T {
    fn cf_score(&self, user: u32, item: u32) -> Option<f64> {
        (**self).cf_score(user, item)
    }
}

impl<T: CfScorer + ?Sized> CfScorer for std::sync::Arc<T> {
    fn cf_score(&self, user: u32, item: u32) -> Option<f64> {
        (**self).cf_score(user, item)
    }
}

impl<T: CfScorer + ?Sized> CfScorer for Box<T> {
    fn cf_score(&self, user: u32, item: u32) -> Option<f64> {
        (**self).cf_score(user, item)
    }
}

/// Per-user attribute weights: the mean over the user's rated items of
/// `(r_uj - mu_u) * x_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfiles {
    pub dimension: usize,
    profiles: Vec<Vec<f64>>,
}

impl UserProfiles {
    /// `features[j]` is the dense attribute row of item `j`; items beyond
    /// `features` count as attribute-free.
    pub fn build(train: &RatingsMatrix, features: &[Vec<f64>]) -> Self {
        let dimension = features.first().map_or(0, Vec::len);
        let profiles = (0..train.num_users() as u32)
            .map(|u| {
                let row = train.user_row(u);
                let mut p = vec![0.0; dimension];
                let Some(mean) = row.mean() else {
                    return p;
                };
                for (j, r) in row.iter() {
                    if let Some(x) = features.get(j as usize) {
                        for (pa, xa) in p.iter_mut().zip(x) {
                            *pa += (r - mean) * xa;
                        }
                    }
                }
                let n = row.len() as f64;
                p.iter_mut().for_each(|v| *v /= n);
                p
            })
            .collect();
        UserProfiles { dimension, profiles }
    }

    /// Empty slice for users outside the training id space.
    pub fn profile(&self, user: u32) -> &[f64] {
        self.profiles.get(user as usize).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

/// Cosine of profile and attributes mapped from `[-1, 1]` onto the scale;
/// `fallback` when either vector is zero or empty.
pub fn content_score(profile: &[f64], attributes: &[f64], scale: RatingScale, fallback: f64) -> f64 {
    if profile.len() != attributes.len() {
        return fallback;
    }
    match dense_cosine(profile, attributes) {
        Some(c) => scale.clamp(scale.min + (c.clamp(-1.0, 1.0) + 1.0) / 2.0 * (scale.max - scale.min)),
        None => fallback,
    }
}

/// One hybrid prediction with the weight actually applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridPrediction {
    pub value: f64,
    /// `alpha` for warm pairs, `0.0` when the content path was forced.
    pub alpha_used: f64,
    pub cf: Option<f64>,
    pub content: f64,
}

pub struct HybridModel<C> {
    pub config: HybridConfig,
    pub cf: C,
    profiles: UserProfiles,
    features: Vec<Vec<f64>>,
    user_degree: Vec<usize>,
    item_degree: Vec<usize>,
    global_mean: f64,
    scale: RatingScale,
}

impl<C: CfScorer> HybridModel<C> {
    /// Profiles and warmth come from `train`, which should be the matrix the
    /// CF backend was fitted on.
    pub fn new(config: HybridConfig, cf: C, train: &RatingsMatrix, features: Vec<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        let profiles = UserProfiles::build(train, &features);
        Ok(HybridModel {
            config,
            cf,
            profiles,
            features,
            user_degree: (0..train.num_users() as u32).map(|u| train.user_degree(u)).collect(),
            item_degree: (0..train.num_items() as u32).map(|i| train.item_degree(i)).collect(),
            global_mean: train.global_mean().unwrap_or(train.scale().midpoint()),
            scale: train.scale(),
        })
    }

    pub fn profiles(&self) -> &UserProfiles {
        &self.profiles
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    pub fn is_warm(&self, user: u32, item: u32) -> bool {
        let t = self.config.cold_threshold;
        self.user_degree.get(user as usize).copied().unwrap_or(0) >= t
            && self.item_degree.get(item as usize).copied().unwrap_or(0) >= t
    }

    pub fn content(&self, user: u32, item: u32) -> f64 {
        let attrs = self.features.get(item as usize).map_or(&[][..], Vec::as_slice);
        content_score(self.profiles.profile(user), attrs, self.scale, self.global_mean)
    }

    pub fn predict_detailed(&self, user: u32, item: u32) -> HybridPrediction {
        self.blend(user, item, self.config.alpha)
    }

    pub fn predict(&self, user: u32, item: u32) -> f64 {
        self.predict_detailed(user, item).value
    }

    fn blend(&self, user: u32, item: u32, alpha: f64) -> HybridPrediction {
        let content = self.content(user, item);
        let cf = if self.is_warm(user, item) {
            self.cf.cf_score(user, item)
        } else {
            None
        };
        let (value, alpha_used) = match cf {
            Some(c) => (alpha * c + (1.0 - alpha) * content, alpha),
            None => (content, 0.0),
        };
        HybridPrediction {
            value: self.scale.clamp(value),
            alpha_used,
            cf,
            content,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaTuning {
    pub best: f64,
    /// `(alpha, validation RMSE)` for every grid value, in grid order.
    pub table: Vec<(f64, f64)>,
}

/// Picks the grid value with the lowest validation RMSE; ties go to the
/// larger alpha. The CF and content scores are computed once per pair.
pub fn tune_alpha<C: CfScorer>(
    model: &HybridModel<C>,
    validation: &RatingsMatrix,
    grid: &[f64],
) -> Result<AlphaTuning> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("alpha grid is empty".into()));
    }
    if validation.is_empty() {
        return Err(Error::EmptyInput);
    }
    for &a in grid {
        HybridConfig {
            alpha: a,
            ..model.config
        }
        .validate()?;
    }
    let parts: Vec<(Option<f64>, f64, f64)> = validation
        .entries()
        .iter()
        .map(|r| {
            let p = model.blend(r.user, r.item, 0.0);
            (p.cf, p.content, r.value)
        })
        .collect();
    let table: Vec<(f64, f64)> = grid
        .iter()
        .map(|&a| {
            let sq: f64 = parts
                .iter()
                .map(|&(cf, content, actual)| {
                    let v = cf.map_or(content, |c| a * c + (1.0 - a) * content);
                    let e = model.scale.clamp(v) - actual;
                    e * e
                })
                .sum();
            (a, (sq / parts.len() as f64).sqrt())
        })
        .collect();
    let best = table
        .iter()
        .copied()
        .reduce(|best, cur| {
            if cur.1 < best.1 || (cur.1 == best.1 && cur.0 > best.0) {
                cur
            } else {
                best
            }
        })
        .map(|(a, _)| a)
        .unwrap();
    Ok(AlphaTuning { best, table })
}
