//! Sparse user-item rating store, train/test splitting and sparsity masking.
//!
//! A [`RatingsMatrix`] keeps its entries sorted by `(user, item)` together
//! with a compressed row view (per user) and a compressed column view (per
//! item), so both adjacency directions iterate in `O(degree)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: u32,
    pub item: u32,
    pub value: f64,
}

impl Rating {
    pub fn new(user: u32, item: u32, value: f64) -> Self {
        Rating { user, item, value }
    }
}

/// Closed interval of admissible ratings, used to clamp predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl RatingScale {
    pub fn new(min: f64, max: f64) -> Self {
        RatingScale { min, max }
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }
}

/// Borrowed sparse vector: strictly increasing ids with matching values.
#[derive(Debug, Clone, Copy)]
pub struct SparseRow<'a> {
    pub ids: &'a [u32],
    pub values: &'a [f64],
}

impl<'a> SparseRow<'a> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<f64> {
        self.ids.binary_search(&id).ok().map(|pos| self.values[pos])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + 'a {
        self.ids.iter().copied().zip(self.values.iter().copied())
    }

    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.values.iter().sum::<f64>() / self.values.len() as f64)
        }
    }
}

/// The observed rating set together with its row and column adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsMatrix {
    num_users: usize,
    num_items: usize,
    entries: Vec<Rating>,
    scale: RatingScale,
    user_offsets: Vec<usize>,
    user_items: Vec<u32>,
    user_values: Vec<f64>,
    item_offsets: Vec<usize>,
    item_users: Vec<u32>,
    item_values: Vec<f64>,
}

/// Builds a matrix whose dimensions are one past the largest ids seen.
pub fn build_ratings<I>(triples: I) -> Result<RatingsMatrix>
where
    I: IntoIterator<Item = (u32, u32, f64)>,
{
    let entries: Vec<Rating> = triples.into_iter().map(|(u, i, r)| Rating::new(u, i, r)).collect();
    let num_users = entries.iter().map(|r| r.user as usize + 1).max().unwrap_or(0);
    let num_items = entries.iter().map(|r| r.item as usize + 1).max().unwrap_or(0);
    RatingsMatrix::from_entries(num_users, num_items, entries, None)
}

impl RatingsMatrix {
    /// Validates and indexes `entries`. When `scale` is `None` it is taken
    /// from the observed minimum and maximum rating.
    pub fn from_entries(
        num_users: usize,
        num_items: usize,
        mut entries: Vec<Rating>,
        scale: Option<RatingScale>,
    ) -> Result<Self> {
        for r in &entries {
            if !r.value.is_finite() {
                return Err(Error::NonFiniteRating {
                    user: r.user,
                    item: r.item,
                });
            }
            if r.user as usize >= num_users || r.item as usize >= num_items {
                return Err(Error::IdOutOfRange {
                    user: r.user,
                    item: r.item,
                    num_users,
                    num_items,
                });
            }
        }
        entries.sort_by_key(|r| (r.user, r.item));
        if let Some(w) = entries
            .windows(2)
            .find(|w| w[0].user == w[1].user && w[0].item == w[1].item)
        {
            return Err(Error::DuplicateEntry {
                user: w[0].user,
                item: w[0].item,
            });
        }

        let scale = scale.unwrap_or_else(|| {
            let (lo, hi) = entries.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.value), hi.max(r.value))
            });
            if entries.is_empty() {
                RatingScale::new(0.0, 0.0)
            } else {
                RatingScale::new(lo, hi)
            }
        });

        let mut user_offsets = vec![0usize; num_users + 1];
        let mut item_offsets = vec![0usize; num_items + 1];
        for r in &entries {
            user_offsets[r.user as usize + 1] += 1;
            item_offsets[r.item as usize + 1] += 1;
        }
        for u in 0..num_users {
            user_offsets[u + 1] += user_offsets[u];
        }
        for i in 0..num_items {
            item_offsets[i + 1] += item_offsets[i];
        }

        let user_items = entries.iter().map(|r| r.item).collect();
        let user_values = entries.iter().map(|r| r.value).collect();

        // entries are user-major, so each item column fills in ascending user order
        let mut cursor = item_offsets.clone();
        let mut item_users = vec![0u32; entries.len()];
        let mut item_values = vec![0f64; entries.len()];
        for r in &entries {
            let slot = &mut cursor[r.item as usize];
            item_users[*slot] = r.user;
            item_values[*slot] = r.value;
            *slot += 1;
        }

        Ok(RatingsMatrix {
            num_users,
            num_items,
            entries,
            scale,
            user_offsets,
            user_items,
            user_values,
            item_offsets,
            item_users,
            item_values,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted by `(user, item)`.
    pub fn entries(&self) -> &[Rating] {
        &self.entries
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn with_scale(mut self, scale: RatingScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn density(&self) -> f64 {
        let cells = self.num_users as f64 * self.num_items as f64;
        if cells == 0.0 {
            0.0
        } else {
            self.entries.len() as f64 / cells
        }
    }

    pub fn user_row(&self, user: u32) -> SparseRow<'_> {
        let u = user as usize;
        if u >= self.num_users {
            return SparseRow { ids: &[], values: &[] };
        }
        let (a, b) = (self.user_offsets[u], self.user_offsets[u + 1]);
        SparseRow {
            ids: &self.user_items[a..b],
            values: &self.user_values[a..b],
        }
    }

    pub fn item_column(&self, item: u32) -> SparseRow<'_> {
        let i = item as usize;
        if i >= self.num_items {
            return SparseRow { ids: &[], values: &[] };
        }
        let (a, b) = (self.item_offsets[i], self.item_offsets[i + 1]);
        SparseRow {
            ids: &self.item_users[a..b],
            values: &self.item_values[a..b],
        }
    }

    pub fn user_degree(&self, user: u32) -> usize {
        self.user_row(user).len()
    }

    pub fn item_degree(&self, item: u32) -> usize {
        self.item_column(item).len()
    }

    pub fn get(&self, user: u32, item: u32) -> Option<f64> {
        self.user_row(user).get(item)
    }

    pub fn global_mean(&self) -> Option<f64> {
        if self.entries.is_empty() {
            None
        } else {
            Some(self.entries.iter().map(|r| r.value).sum::<f64>() / self.entries.len() as f64)
        }
    }

    /// Per-user mean rating; users without ratings get `fallback`.
    pub fn user_means(&self, fallback: f64) -> Vec<f64> {
        (0..self.num_users as u32)
            .map(|u| self.user_row(u).mean().unwrap_or(fallback))
            .collect()
    }

    /// Matrix over the same id space and scale holding only `entries`.
    pub fn restrict(&self, entries: Vec<Rating>) -> Result<Self> {
        Self::from_entries(self.num_users, self.num_items, entries, Some(self.scale))
    }

    fn subset_by_index(&self, keep: &[bool]) -> (Vec<Rating>, Vec<Rating>) {
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for (r, &k) in self.entries.iter().zip(keep) {
            if k {
                kept.push(*r);
            } else {
                dropped.push(*r);
            }
        }
        (kept, dropped)
    }
}

/// How to hold out test ratings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
    pub stratify_by_user: bool,
}

impl SplitSpec {
    /// The 8:2 stratified split used by the experiment harness.
    pub fn eighty_twenty(seed: u64) -> Self {
        SplitSpec {
            test_fraction: 0.2,
            seed,
            stratify_by_user: true,
        }
    }
}

/// Partitions `matrix` into disjoint train and test sets.
///
/// Stratified: every user with `n >= 2` ratings contributes
/// `min(round(f * n), n - 1)` ratings to test; single-rating users stay in
/// train. Global: `round(f * |K|)` entries drawn uniformly.
pub fn split(matrix: &RatingsMatrix, spec: &SplitSpec) -> Result<(RatingsMatrix, RatingsMatrix)> {
    if matrix.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test_fraction must lie in (0, 1), got {}",
            spec.test_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut in_train = vec![true; matrix.len()];
    if spec.stratify_by_user {
        for u in 0..matrix.num_users {
            let (a, b) = (matrix.user_offsets[u], matrix.user_offsets[u + 1]);
            let n = b - a;
            if n < 2 {
                continue;
            }
            let mut idx: Vec<usize> = (a..b).collect();
            idx.shuffle(&mut rng);
            let n_test = ((spec.test_fraction * n as f64).round() as usize).min(n - 1);
            for &e in &idx[..n_test] {
                in_train[e] = false;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..matrix.len()).collect();
        idx.shuffle(&mut rng);
        let n_test = (spec.test_fraction * matrix.len() as f64).round() as usize;
        for &e in &idx[..n_test] {
            in_train[e] = false;
        }
    }
    let (train, test) = matrix.subset_by_index(&in_train);
    Ok((matrix.restrict(train)?, matrix.restrict(test)?))
}

/// Fraction of training entries kept by [`mask`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityLevel {
    retained_fraction: f64,
}

impl SparsityLevel {
    pub fn retained(retained_fraction: f64) -> Result<Self> {
        if !(retained_fraction > 0.0 && retained_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "retained_fraction must lie in (0, 1], got {retained_fraction}"
            )));
        }
        Ok(SparsityLevel { retained_fraction })
    }

    /// `sparsity` is the fraction of training entries removed, so
    /// "80% sparsity" keeps 20% of them.
    pub fn from_sparsity(sparsity: f64) -> Result<Self> {
        Self::retained(1.0 - sparsity)
    }

    pub fn retained_fraction(&self) -> f64 {
        self.retained_fraction
    }

    /// Rounded to 12 decimals so that `1 - 0.8` reports as `0.2`.
    pub fn sparsity(&self) -> f64 {
        ((1.0 - self.retained_fraction) * 1e12).round() / 1e12
    }
}

/// Order in which [`mask`] admits training entries for a given seed.
///
/// One seeded permutation of the entries, reordered so that entries which
/// are the first occurrence of their user or item come first. Every mask
/// for the same seed is a prefix of this order, so lower sparsity levels
/// always contain higher ones.
pub fn retention_order(train: &RatingsMatrix, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..train.len()).collect();
    perm.shuffle(&mut rng);

    let mut user_seen = vec![false; train.num_users];
    let mut item_seen = vec![false; train.num_items];
    let mut head = Vec::new();
    let mut tail = Vec::with_capacity(train.len());
    for e in perm {
        let r = train.entries[e];
        let (u, i) = (r.user as usize, r.item as usize);
        if !user_seen[u] || !item_seen[i] {
            user_seen[u] = true;
            item_seen[i] = true;
            head.push(e);
        } else {
            tail.push(e);
        }
    }
    head.extend(tail);
    head
}

/// Keeps `round(retained_fraction * |train|)` entries of `train`.
pub fn mask(train: &RatingsMatrix, level: SparsityLevel, seed: u64) -> Result<RatingsMatrix> {
    let keep_n = (level.retained_fraction * train.len() as f64).round() as usize;
    if keep_n == train.len() {
        return Ok(train.clone());
    }
    let order = retention_order(train, seed);
    let mut keep = vec![false; train.len()];
    for &e in &order[..keep_n] {
        keep[e] = true;
    }
    let (kept, _) = train.subset_by_index(&keep);
    train.restrict(kept)
}
