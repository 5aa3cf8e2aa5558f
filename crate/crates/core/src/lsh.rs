//! Sign-random-projection locality-sensitive hashing for cosine similarity.
//!
//! Each of `L` tables hashes a vector to the `b`-bit pattern of signs of its
//! projections onto `b` random hyperplanes. Two vectors at angle `theta`
//! agree on a single bit with probability `1 - theta / pi`, so similar
//! vectors share buckets far more often than dissimilar ones and a query only
//! scores the union of its buckets instead of the whole population.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::FactorMatrix;
use crate::linalg::dot;
use crate::neighborhood::{dense_cosine, rank_neighbors, Axis, Neighbor, SimilarityIndex};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LshConfig {
    pub num_tables: usize,
    /// Bits per hash key; expected bucket size is about `n / 2^b`.
    pub bits_per_table: usize,
    pub seed: u64,
    /// Re-score candidates with exact cosine and return the best.
    pub rerank: bool,
}

impl Default for LshConfig {
    fn default() -> Self {
        LshConfig {
            num_tables: 16,
            bits_per_table: 8,
            seed: 0,
            rerank: true,
        }
    }
}

impl LshConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tables < 1 {
            return Err(Error::InvalidParameter("num_tables must be >= 1".into()));
        }
        if !(1..=64).contains(&self.bits_per_table) {
            return Err(Error::InvalidParameter("bits_per_table must lie in 1..=64".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LshIndex {
    config: LshConfig,
    dimension: usize,
    /// `num_tables * bits_per_table` unit vectors, each of length `dimension`.
    hyperplanes: Vec<f64>,
    tables: Vec<HashMap<u64, Vec<u32>>>,
    ids: Vec<u32>,
    vectors: Vec<Vec<f64>>,
    position: HashMap<u32, usize>,
}

/// Result of one query, with the number of exact similarity evaluations it
/// cost.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub neighbors: Vec<Neighbor>,
    /// Size of the deduplicated union of the query's buckets.
    pub candidates: usize,
}

fn random_hyperplanes(count: usize, dimension: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count * dimension);
    if dimension == 0 {
        return out;
    }
    for _ in 0..count {
        loop {
            let h: Vec<f64> = (0..dimension).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dot(&h, &h).sqrt();
            if norm > 0.0 {
                out.extend(h.iter().map(|v| v / norm));
                break;
            }
        }
    }
    out
}

/// Builds the tables. Vectors must share one dimension and be non-zero;
/// ids must be unique.
pub fn build_lsh(vectors: &[(u32, Vec<f64>)], config: &LshConfig) -> Result<LshIndex> {
    config.validate()?;
    let dimension = vectors.first().map(|(_, v)| v.len()).unwrap_or(0);
    let mut position = HashMap::with_capacity(vectors.len());
    for (pos, (id, v)) in vectors.iter().enumerate() {
        if v.len() != dimension {
            return Err(Error::DimensionMismatch(format!(
                "vector {id} has {} components, expected {dimension}",
                v.len()
            )));
        }
        if v.iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroVector(id.to_string()));
        }
        if position.insert(*id, pos).is_some() {
            return Err(Error::InvalidParameter(format!("duplicate id {id}")));
        }
    }
    let hyperplanes = random_hyperplanes(config.num_tables * config.bits_per_table, dimension, config.seed);
    let mut index = LshIndex {
        config: *config,
        dimension,
        hyperplanes,
        tables: vec![HashMap::new(); config.num_tables],
        ids: vectors.iter().map(|(id, _)| *id).collect(),
        vectors: vectors.iter().map(|(_, v)| v.clone()).collect(),
        position,
    };
    let keys: Vec<Vec<u64>> = par::map_collect(vectors.len(), |p| index.keys(&vectors[p].1));
    for (p, ks) in keys.iter().enumerate() {
        for (t, &key) in ks.iter().enumerate() {
            index.tables[t].entry(key).or_default().push(index.ids[p]);
        }
    }
    Ok(index)
}

impl LshIndex {
    pub fn config(&self) -> &LshConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn hyperplane(&self, table: usize, bit: usize) -> &[f64] {
        let h = table * self.config.bits_per_table + bit;
        &self.hyperplanes[h * self.dimension..(h + 1) * self.dimension]
    }

    /// Hash key of `v` in `table`: bit `j` is set iff the projection on
    /// hyperplane `j` is >= 0, so a zero projection hashes as positive.
    pub fn key(&self, v: &[f64], table: usize) -> u64 {
        (0..self.config.bits_per_table).fold(0u64, |key, j| {
            let bit = (dot(v, self.hyperplane(table, j)) >= 0.0) as u64;
            key | (bit << j)
        })
    }

    pub fn keys(&self, v: &[f64]) -> Vec<u64> {
        (0..self.config.num_tables).map(|t| self.key(v, t)).collect()
    }

    /// Deduplicated union of `v`'s buckets in table order, without `exclude`.
    pub fn candidates(&self, v: &[f64], exclude: Option<u32>) -> Vec<u32> {
        let mut seen = vec![false; self.ids.len()];
        let mut out = Vec::new();
        for (t, table) in self.tables.iter().enumerate() {
            if let Some(bucket) = table.get(&self.key(v, t)) {
                for &id in bucket {
                    let p = self.position[&id];
                    if !seen[p] && Some(id) != exclude {
                        seen[p] = true;
                        out.push(id);
                    }
                }
            }
        }
        out
    }

    pub fn query(&self, v: &[f64], k: usize) -> Result<QueryResult> {
        self.query_excluding(v, k, None)
    }

    /// Top-`k` neighbors of `v` among its candidates.
    ///
    /// With reranking, candidates are scored by exact cosine (ties by
    /// ascending id). Without it they are returned in bucket order and scored
    /// by the fraction of tables in which they collide with `v`.
    pub fn query_excluding(&self, v: &[f64], k: usize, exclude: Option<u32>) -> Result<QueryResult> {
        if self.ids.is_empty() {
            return Ok(QueryResult {
                neighbors: Vec::new(),
                candidates: 0,
            });
        }
        if v.len() != self.dimension {
            return Err(Error::DimensionMismatch(format!(
                "query has {} components, index has {}",
                v.len(),
                self.dimension
            )));
        }
        let cands = self.candidates(v, exclude);
        let candidates = cands.len();
        let neighbors = if self.config.rerank {
            let scored = cands
                .iter()
                .filter_map(|&id| {
                    dense_cosine(v, &self.vectors[self.position[&id]]).map(|score| Neighbor { id, score })
                })
                .collect();
            rank_neighbors(scored, k)
        } else {
            let keys = self.keys(v);
            cands
                .iter()
                .take(k)
                .map(|&id| {
                    let w = &self.vectors[self.position[&id]];
                    let hits = keys
                        .iter()
                        .enumerate()
                        .filter(|&(t, &key)| self.key(w, t) == key)
                        .count();
                    Neighbor {
                        id,
                        score: hits as f64 / self.config.num_tables as f64,
                    }
                })
                .collect()
        };
        Ok(QueryResult { neighbors, candidates })
    }
}

/// Cost summary of an LSH-built neighbor index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LshStats {
    pub mean_candidates: f64,
    /// Mean candidates over the `population - 1` exact comparisons a
    /// brute-force search would make.
    pub candidate_fraction: f64,
    pub population: usize,
}

/// Approximate neighbor index over dense per-entity vectors.
///
/// `vectors[e]` is entity `e`'s vector; entities with no vector or a zero
/// vector get an empty neighbor list and are never returned as neighbors.
pub fn lsh_neighborhood_index(
    vectors: &[Option<Vec<f64>>],
    axis: Axis,
    config: &LshConfig,
    n_max: usize,
) -> Result<(SimilarityIndex, LshStats)> {
    let indexed: Vec<(u32, Vec<f64>)> = vectors
        .iter()
        .enumerate()
        .filter_map(|(e, v)| {
            let v = v.as_ref()?;
            v.iter().any(|&x| x != 0.0).then(|| (e as u32, v.clone()))
        })
        .collect();
    let index = build_lsh(&indexed, config)?;
    let results: Vec<Result<QueryResult>> = par::map_collect(indexed.len(), |p| {
        let (id, v) = &indexed[p];
        index.query_excluding(v, n_max, Some(*id))
    });
    let mut neighbors = vec![Vec::new(); vectors.len()];
    let mut total = 0usize;
    for ((id, _), res) in indexed.iter().zip(results) {
        let res = res?;
        total += res.candidates;
        neighbors[*id as usize] = res.neighbors;
    }
    let population = indexed.len();
    let mean_candidates = if population == 0 {
        0.0
    } else {
        total as f64 / population as f64
    };
    let candidate_fraction = if population > 1 {
        mean_candidates / (population - 1) as f64
    } else {
        0.0
    };
    Ok((
        SimilarityIndex { axis, neighbors },
        LshStats {
            mean_candidates,
            candidate_fraction,
            population,
        },
    ))
}

/// Rows of a factor matrix as optional vectors (zero rows become `None`).
pub fn factor_rows(factors: &FactorMatrix) -> Vec<Option<Vec<f64>>> {
    (0..factors.rows())
        .map(|r| {
            let row = factors.row(r);
            row.iter().any(|&x| x != 0.0).then(|| row.to_vec())
        })
        .collect()
}

/// Exact top-`k` cosine neighbors by brute force, the reference for recall.
pub fn exact_neighbors(vectors: &[Option<Vec<f64>>], k: usize) -> Vec<Vec<Neighbor>> {
    par::map_collect(vectors.len(), |e| {
        let Some(v) = &vectors[e] else {
            return Vec::new();
        };
        let list = vectors
            .iter()
            .enumerate()
            .filter(|&(o, _)| o != e)
            .filter_map(|(o, w)| {
                let w = w.as_ref()?;
                dense_cosine(v, w).map(|score| Neighbor { id: o as u32, score })
            })
            .collect();
        rank_neighbors(list, k)
    })
}

/// Mean fraction of each entity's exact neighbors found by `approx`.
pub fn recall_at_k(approx: &SimilarityIndex, exact: &[Vec<Neighbor>], k: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (e, truth) in exact.iter().enumerate() {
        let truth = &truth[..truth.len().min(k)];
        if truth.is_empty() {
            continue;
        }
        let found = approx.neighbors_of(e as u32);
        let found = &found[..found.len().min(k)];
        let hits = truth.iter().filter(|t| found.iter().any(|f| f.id == t.id)).count();
        sum += hits as f64 / truth.len() as f64;
        n += 1;
    }
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LshTrial {
    pub config: LshConfig,
    pub recall: f64,
    pub stats: LshStats,
}

/// Builds an index for every config, measures recall@`k` against brute
/// force, and picks the lowest candidate fraction among trials with recall
/// at least `min_recall` (ties go to higher recall, then grid order).
pub fn cheapest_config(
    vectors: &[Option<Vec<f64>>],
    configs: &[LshConfig],
    k: usize,
    min_recall: f64,
) -> Result<(Vec<LshTrial>, Option<usize>)> {
    let exact = exact_neighbors(vectors, k);
    let mut trials = Vec::with_capacity(configs.len());
    for config in configs {
        let (index, stats) = lsh_neighborhood_index(vectors, Axis::Item, config, k)?;
        trials.push(LshTrial {
            config: *config,
            recall: recall_at_k(&index, &exact, k),
            stats,
        });
    }
    let best = trials
        .iter()
        .enumerate()
        .filter(|(_, t)| t.recall >= min_recall)
        .min_by(|(_, a), (_, b)| {
            a.stats
                .candidate_fraction
                .total_cmp(&b.stats.candidate_fraction)
                .then(b.recall.total_cmp(&a.recall))
        })
        .map(|(i, _)| i);
    Ok((trials, best))
}
