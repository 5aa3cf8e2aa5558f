//! Memory-based collaborative filtering: pairwise similarity, exact top-N
//! neighbor indexes and weighted-average rating prediction.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::ratings::{RatingsMatrix, SparseRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    User,
    Item,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user" => Ok(Axis::User),
            "item" => Ok(Axis::Item),
            other => Err(Error::InvalidParameter(format!("unknown axis `{other}`"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::User => "user",
            Axis::Item => "item",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    /// Cosine over full sparse vectors, missing entries read as zero.
    Cosine,
    /// Pearson correlation over co-rated entries only.
    Pearson,
    /// Cosine between externally supplied embedding vectors.
    SemanticCosine,
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(SimilarityKind::Cosine),
            "pearson" => Ok(SimilarityKind::Pearson),
            "semantic_cosine" => Ok(SimilarityKind::SemanticCosine),
            other => Err(Error::InvalidParameter(format!("unknown similarity `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMetric {
    pub kind: SimilarityKind,
    /// Damping: scores are multiplied by `overlap / (overlap + shrinkage)`.
    pub shrinkage: f64,
    pub min_overlap: usize,
}

impl SimilarityMetric {
    pub fn new(kind: SimilarityKind) -> Self {
        SimilarityMetric {
            kind,
            shrinkage: 0.0,
            min_overlap: 1,
        }
    }

    pub fn cosine() -> Self {
        Self::new(SimilarityKind::Cosine)
    }

    pub fn pearson() -> Self {
        Self::new(SimilarityKind::Pearson)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.shrinkage.is_finite() || self.shrinkage < 0.0 {
            return Err(Error::InvalidParameter("shrinkage must be >= 0".into()));
        }
        if self.min_overlap < 1 {
            return Err(Error::InvalidParameter("min_overlap must be >= 1".into()));
        }
        Ok(())
    }
}

/// Why a pair has no similarity. Index construction skips such pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoSimilarity {
    InsufficientOverlap,
    ConstantVector,
    ZeroVector,
}

fn co_rated(a: SparseRow<'_>, b: SparseRow<'_>, mut f: impl FnMut(f64, f64)) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.ids.len() && j < b.ids.len() {
        match a.ids[i].cmp(&b.ids[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                f(a.values[i], b.values[j]);
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Similarity of two sparse vectors.
///
/// The result is symmetric bit for bit: both merges visit co-rated ids in
/// the same order and every product is commutative.
pub fn similarity(
    a: SparseRow<'_>,
    b: SparseRow<'_>,
    metric: &SimilarityMetric,
) -> std::result::Result<f64, NoSimilarity> {
    match metric.kind {
        SimilarityKind::Cosine => {
            let mut dot = 0.0;
            let overlap = co_rated(a, b, |x, y| dot += x * y);
            if overlap < metric.min_overlap {
                return Err(NoSimilarity::InsufficientOverlap);
            }
            let na = a.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(NoSimilarity::ZeroVector);
            }
            Ok(shrink((dot / (na * nb)).clamp(-1.0, 1.0), overlap, metric.shrinkage))
        }
        SimilarityKind::Pearson => {
            let (mut sa, mut sb) = (0.0, 0.0);
            let (mut lo_a, mut hi_a, mut lo_b, mut hi_b) =
                (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            let overlap = co_rated(a, b, |x, y| {
                sa += x;
                sb += y;
                (lo_a, hi_a) = (lo_a.min(x), hi_a.max(x));
                (lo_b, hi_b) = (lo_b.min(y), hi_b.max(y));
            });
            if overlap < metric.min_overlap.max(1) {
                return Err(NoSimilarity::InsufficientOverlap);
            }
            // decided on the values, since a shifted constant can leave
            // rounding noise in the deviations
            if lo_a == hi_a || lo_b == hi_b {
                return Err(NoSimilarity::ConstantVector);
            }
            let (ma, mb) = (sa / overlap as f64, sb / overlap as f64);
            let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
            co_rated(a, b, |x, y| {
                let (dx, dy) = (x - ma, y - mb);
                num += dx * dy;
                va += dx * dx;
                vb += dy * dy;
            });
            if va == 0.0 || vb == 0.0 {
                return Err(NoSimilarity::ConstantVector);
            }
            Ok(shrink(
                (num / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0),
                overlap,
                metric.shrinkage,
            ))
        }
        SimilarityKind::SemanticCosine => {
            let mut dot = 0.0;
            co_rated(a, b, |x, y| dot += x * y);
            let na = a.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(NoSimilarity::ZeroVector);
            }
            Ok((dot / (na * nb)).clamp(-1.0, 1.0))
        }
    }
}

fn shrink(score: f64, overlap: usize, shrinkage: f64) -> f64 {
    if shrinkage == 0.0 {
        score
    } else {
        score * overlap as f64 / (overlap as f64 + shrinkage)
    }
}

/// Cosine similarity of two dense vectors, `None` if either is zero.
pub fn dense_cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u32,
    pub score: f64,
}

/// Per-entity neighbor lists sorted by descending score, ties by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityIndex {
    pub axis: Axis,
    pub neighbors: Vec<Vec<Neighbor>>,
}

pub(crate) fn rank_neighbors(mut list: Vec<Neighbor>, n_max: usize) -> Vec<Neighbor> {
    list.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    list.truncate(n_max);
    list
}

impl SimilarityIndex {
    pub fn neighbors_of(&self, id: u32) -> &[Neighbor] {
        self.neighbors.get(id as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Writes `entity_id,neighbor_id,score` rows, one per neighbor.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "entity_id,neighbor_id,score")?;
        for (e, list) in self.neighbors.iter().enumerate() {
            for n in list {
                writeln!(out, "{e},{},{:?}", n.id, n.score)?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, axis: Axis, len: usize) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); len];
        for (n, line) in input.lines().enumerate().skip(1) {
            let line = line?;
            let bad = || Error::InvalidParameter(format!("index csv line {}: `{line}`", n + 1));
            let mut f = line.split(',');
            let e: usize = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let id: u32 = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let score: f64 = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            neighbors.get_mut(e).ok_or_else(bad)?.push(Neighbor { id, score });
        }
        Ok(SimilarityIndex { axis, neighbors })
    }
}

fn axis_len(matrix: &RatingsMatrix, axis: Axis) -> usize {
    match axis {
        Axis::User => matrix.num_users(),
        Axis::Item => matrix.num_items(),
    }
}

fn axis_row(matrix: &RatingsMatrix, axis: Axis, id: u32) -> SparseRow<'_> {
    match axis {
        Axis::User => matrix.user_row(id),
        Axis::Item => matrix.item_column(id),
    }
}

fn cross_row(matrix: &RatingsMatrix, axis: Axis, id: u32) -> SparseRow<'_> {
    match axis {
        Axis::User => matrix.item_column(id),
        Axis::Item => matrix.user_row(id),
    }
}

/// Exact top-`n_max` neighbors of every user or item.
///
/// Rating-based metrics consider every entity sharing at least one co-rating;
/// `semantic_cosine` compares all pairs with embeddings, which must then be
/// given per internal id along `axis`.
pub fn build_index(
    matrix: &RatingsMatrix,
    axis: Axis,
    metric: &SimilarityMetric,
    n_max: usize,
    embeddings: Option<&[Option<Vec<f64>>]>,
) -> Result<SimilarityIndex> {
    metric.validate()?;
    if n_max < 1 {
        return Err(Error::InvalidParameter("n_max must be >= 1".into()));
    }
    let n = axis_len(matrix, axis);
    let neighbors = if metric.kind == SimilarityKind::SemanticCosine {
        let emb = embeddings.ok_or(Error::MissingEmbeddings)?;
        par::map_collect(n, |e| {
            let Some(Some(v)) = emb.get(e) else {
                return Vec::new();
            };
            let list = emb
                .iter()
                .enumerate()
                .take(n)
                .filter(|&(o, _)| o != e)
                .filter_map(|(o, w)| {
                    let w = w.as_ref()?;
                    if w.len() != v.len() {
                        return None;
                    }
                    dense_cosine(v, w).map(|score| Neighbor { id: o as u32, score })
                })
                .collect();
            rank_neighbors(list, n_max)
        })
    } else {
        par::map_collect(n, |e| {
            let row = axis_row(matrix, axis, e as u32);
            let mut seen = vec![false; n];
            seen[e] = true;
            let mut list = Vec::new();
            for &x in row.ids {
                for &o in cross_row(matrix, axis, x).ids {
                    if !seen[o as usize] {
                        seen[o as usize] = true;
                        if let Ok(score) = similarity(row, axis_row(matrix, axis, o), metric) {
                            list.push(Neighbor { id: o, score });
                        }
                    }
                }
            }
            rank_neighbors(list, n_max)
        })
    };
    Ok(SimilarityIndex { axis, neighbors })
}

/// Weighted-average prediction from an index over `matrix`.
///
/// User axis: `mu_u + sum s(u,v) (r_vi - mu_v) / sum |s|` over the first `k`
/// positively similar neighbors that rated the item. Item axis:
/// `sum s(i,j) r_uj / sum |s|` over the first `k` positively similar
/// neighbors of the item that the user rated. Results are clamped to the
/// rating scale; `None` means abstain.
pub fn predict(matrix: &RatingsMatrix, index: &SimilarityIndex, user: u32, item: u32, k: usize) -> Option<f64> {
    let means = match index.axis {
        Axis::User => {
            let mut m = vec![0.0; matrix.num_users()];
            m[user as usize] = matrix.user_row(user).mean()?;
            for n in index.neighbors_of(user) {
                if let Some(mv) = matrix.user_row(n.id).mean() {
                    m[n.id as usize] = mv;
                }
            }
            m
        }
        Axis::Item => Vec::new(),
    };
    predict_with_means(matrix, index, &means, user, item, k)
}

fn predict_with_means(
    matrix: &RatingsMatrix,
    index: &SimilarityIndex,
    user_means: &[f64],
    user: u32,
    item: u32,
    k: usize,
) -> Option<f64> {
    if user as usize >= matrix.num_users() || item as usize >= matrix.num_items() || k == 0 {
        return None;
    }
    let (mut num, mut den, mut used) = (0.0, 0.0, 0usize);
    match index.axis {
        Axis::User => {
            for n in index.neighbors_of(user) {
                if n.score <= 0.0 || used == k {
                    break;
                }
                if let Some(r) = matrix.get(n.id, item) {
                    num += n.score * (r - user_means[n.id as usize]);
                    den += n.score.abs();
                    used += 1;
                }
            }
            if used == 0 {
                return None;
            }
            Some(matrix.scale().clamp(user_means[user as usize] + num / den))
        }
        Axis::Item => {
            let row = matrix.user_row(user);
            for n in index.neighbors_of(item) {
                if n.score <= 0.0 || used == k {
                    break;
                }
                if let Some(r) = row.get(n.id) {
                    num += n.score * r;
                    den += n.score.abs();
                    used += 1;
                }
            }
            if used == 0 {
                return None;
            }
            Some(matrix.scale().clamp(num / den))
        }
    }
}

/// A trained memory-based predictor: training matrix, index and user means.
#[derive(Debug, Clone)]
pub struct NeighborhoodModel {
    pub train: RatingsMatrix,
    pub index: SimilarityIndex,
    pub neighbors: usize,
    user_means: Vec<f64>,
}

impl NeighborhoodModel {
    pub fn fit(train: RatingsMatrix, axis: Axis, metric: &SimilarityMetric, n_max: usize, k: usize) -> Result<Self> {
        let index = build_index(&train, axis, metric, n_max, None)?;
        Ok(Self::from_index(train, index, k))
    }

    pub fn from_index(train: RatingsMatrix, index: SimilarityIndex, k: usize) -> Self {
        let user_means = train.user_means(train.global_mean().unwrap_or(0.0));
        NeighborhoodModel {
            train,
            index,
            neighbors: k,
            user_means,
        }
    }

    pub fn predict(&self, user: u32, item: u32) -> Option<f64> {
        predict_with_means(&self.train, &self.index, &self.user_means, user, item, self.neighbors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratings::build_ratings;

    fn row<'a>(ids: &'a [u32], values: &'a [f64]) -> SparseRow<'a> {
        SparseRow { ids, values }
    }

    #[test]
    fn cosine_identity() {
        let v = [5.0, 3.0, 4.0];
        let s = similarity(row(&[0, 1, 2], &v), row(&[0, 1, 2], &v), &SimilarityMetric::cosine()).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_orthogonal() {
        let s = similarity(
            row(&[0, 1], &[1.0, 0.0]),
            row(&[0, 1], &[0.0, 1.0]),
            &SimilarityMetric::cosine(),
        )
        .unwrap();
        assert_eq!(s, 0.0);
        assert_eq!(dense_cosine(&[1.0, 0.0], &[0.0, 1.0]), Some(0.0));
        // disjoint supports have nothing to compare
        assert_eq!(
            similarity(row(&[0], &[1.0]), row(&[1], &[1.0]), &SimilarityMetric::cosine()),
            Err(NoSimilarity::InsufficientOverlap)
        );
    }

    #[test]
    fn pearson_anti_correlation() {
        let s = similarity(
            row(&[0, 1, 2], &[1.0, 2.0, 3.0]),
            row(&[0, 1, 2], &[3.0, 2.0, 1.0]),
            &SimilarityMetric::pearson(),
        )
        .unwrap();
        assert!((s + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_constant_vector() {
        let s = similarity(
            row(&[0, 1, 2], &[2.0, 2.0, 2.0]),
            row(&[0, 1, 2], &[1.0, 2.0, 3.0]),
            &SimilarityMetric::pearson(),
        );
        assert_eq!(s, Err(NoSimilarity::ConstantVector));
    }

    #[test]
    fn shrinkage_damps_by_overlap() {
        let v = [5.0, 3.0];
        let metric = SimilarityMetric {
            shrinkage: 2.0,
            ..SimilarityMetric::cosine()
        };
        let s = similarity(row(&[0, 1], &v), row(&[0, 1], &v), &metric).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_users_are_mutual_neighbors() {
        let m = build_ratings(vec![(0, 0, 4.0), (0, 1, 2.0), (1, 0, 4.0), (1, 1, 2.0)]).unwrap();
        let idx = build_index(&m, Axis::User, &SimilarityMetric::cosine(), 5, None).unwrap();
        for (u, v) in [(0, 1), (1, 0)] {
            let n = idx.neighbors_of(u);
            assert_eq!(n.len(), 1);
            assert_eq!(n[0].id, v);
            assert!((n[0].score - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_user_has_no_neighbors() {
        let m = build_ratings(vec![(0, 0, 4.0), (1, 0, 3.0), (2, 1, 5.0)]).unwrap();
        let idx = build_index(&m, Axis::User, &SimilarityMetric::cosine(), 5, None).unwrap();
        assert!(idx.neighbors_of(2).is_empty());
        assert_eq!(predict(&m, &idx, 2, 0, 10), None);
    }

    #[test]
    fn perfect_twin_prediction() {
        // user 1 is user 0's twin on items 0..3; user 0 also rated item 3
        let m = build_ratings(vec![
            (0, 0, 5.0),
            (0, 1, 3.0),
            (0, 2, 2.0),
            (0, 3, 4.0),
            (1, 0, 5.0),
            (1, 1, 3.0),
            (1, 2, 2.0),
        ])
        .unwrap();
        let idx = build_index(&m, Axis::User, &SimilarityMetric::pearson(), 5, None).unwrap();
        let p = predict(&m, &idx, 1, 3, 5).unwrap();
        // mean-centering: mu_1 + (4 - mu_0) with mu_0 = 3.5, mu_1 = 10/3
        assert!((p - (10.0 / 3.0 + 0.5)).abs() < 1e-12);

        // twins: B matches A everywhere except the held-out item A rated 4
        let m = build_ratings(vec![(0, 0, 5.0), (0, 1, 3.0), (0, 2, 4.0), (1, 0, 5.0), (1, 1, 3.0)]).unwrap();
        let model = NeighborhoodModel::fit(m, Axis::User, &SimilarityMetric::cosine(), 5, 5).unwrap();
        assert_eq!(model.predict(1, 2), Some(4.0));
    }

    #[test]
    fn semantic_index_needs_embeddings() {
        let m = build_ratings(vec![(0, 0, 4.0), (0, 1, 3.0)]).unwrap();
        let metric = SimilarityMetric::new(SimilarityKind::SemanticCosine);
        assert!(matches!(
            build_index(&m, Axis::Item, &metric, 3, None),
            Err(Error::MissingEmbeddings)
        ));
        let emb = vec![Some(vec![1.0, 0.0]), Some(vec![0.6, 0.8])];
        let idx = build_index(&m, Axis::Item, &metric, 3, Some(&emb)).unwrap();
        assert!((idx.neighbors_of(0)[0].score - 0.6).abs() < 1e-15);
    }

    #[test]
    fn index_csv_round_trip() {
        let m = build_ratings(vec![(0, 0, 4.0), (0, 1, 2.0), (1, 0, 3.0), (1, 1, 5.0), (2, 1, 1.0)]).unwrap();
        let idx = build_index(&m, Axis::User, &SimilarityMetric::cosine(), 5, None).unwrap();
        let mut buf = Vec::new();
        idx.write_csv(&mut buf).unwrap();
        let back = SimilarityIndex::read_csv(&buf[..], Axis::User, idx.len()).unwrap();
        assert_eq!(back, idx);
    }
}
