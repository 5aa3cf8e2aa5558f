#![allow(dead_code)]

use cfkit::ratings::{build_ratings, RatingsMatrix};
use proptest::prelude::*;

/// Sparse matrices up to `max_users x max_items` with half-star ratings in
/// [1, 5]; every user and item id below the maximum seen is present as a
/// row/column, possibly empty.
pub fn matrix(max_users: u32, max_items: u32, min_len: usize) -> impl Strategy<Value = RatingsMatrix> {
    proptest::collection::btree_map(
        (0..max_users, 0..max_items),
        2u8..=10,
        min_len..=(max_users * max_items) as usize / 2,
    )
    .prop_map(|m| build_ratings(m.into_iter().map(|((u, i), r)| (u, i, r as f64 / 2.0))).unwrap())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sorted_triples(m: &RatingsMatrix) -> Vec<(u32, u32, u64)> {
    let mut v: Vec<_> = m
        .entries()
        .iter()
        .map(|r| (r.user, r.item, r.value.to_bits()))
        .collect();
    v.sort_unstable();
    v
}
