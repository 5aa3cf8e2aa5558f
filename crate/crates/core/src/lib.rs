//! Collaborative filtering toolkit.
//!
//! Neighborhood CF ([`neighborhood`]), regularized matrix factorization
//! ([`factorization`]), sign-random-projection neighbor search ([`lsh`]),
//! block-partitioned ALS ([`partitioned`]), content+CF blending ([`hybrid`])
//! and an evaluation harness over sparsity levels ([`evaluation`]).

mod clock;
pub mod error;
pub mod evaluation;
pub mod factorization;
pub mod hybrid;
pub mod ingest;
mod linalg;
pub mod lsh;
pub mod neighborhood;
mod par;
pub mod partitioned;
pub mod ratings;

pub use error::{Error, Result};
pub use factorization::{FactorMatrix, FactorModel, Optimizer, TrainConfig, TrainTrace};
pub use neighborhood::{Axis, NeighborhoodModel, SimilarityIndex, SimilarityKind, SimilarityMetric};
pub use par::{available_threads, configure_threads};
pub use ratings::{build_ratings, Rating, RatingScale, RatingsMatrix, SparsityLevel, SplitSpec};
