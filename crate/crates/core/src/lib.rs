//! Hierarchical graph-attention engine for personalized outfit
//! recommendation and outfit compatibility.
//!
//! Users, outfits and items form a three-level graph. Item embeddings are
//! fused from visual and textual features, refined by attention over
//! co-outfit items (seeded by category co-occurrence), then aggregated into
//! outfits and from outfits into users. Recommendation scores are inner
//! products of user and outfit embeddings; compatibility is scored by
//! multi-view attention over an outfit's item embeddings. Both tasks are
//! trained jointly with pairwise ranking losses.

pub mod dataio;
pub mod embed;
pub mod error;
pub mod eval;
pub mod graph;
pub mod math;
pub mod pipeline;
pub mod propagate;
pub mod rng;
pub mod score;
pub mod train;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
