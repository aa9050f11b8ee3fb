//! Approximate nearest neighbor search for `l_p` spaces, `p >= 2`.
//!
//! The index embeds the dataset into `l_2` with a data-dependent average
//! embedding (a normalized power map around a scanned center), hashes the
//! embedded points with a p-stable floor-of-projection LSH, and organizes
//! the recursion as a forest of randomized trees with two node types:
//! dense-ball peeling nodes and embed-and-hash partition nodes. Leaves
//! filter candidates by true `l_p` distance against the approximation
//! radius `c * r`, so any returned answer is within `c * r`
//! unconditionally; the randomness only affects recall.
//!
//! The crate is generic over the scalar type ([`scalar::Scalar`], `f32` or
//! `f64`); the aliases at the crate root fix `f64`, which is also what the
//! file formats store.

// Validation sites spell `!(x > lo)` on purpose: NaN must fail the check,
// and `x <= lo` would let it through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod embed;
pub mod eval;
pub mod forest;
pub mod io;
pub mod lsh;
pub mod metric;
pub mod scalar;

pub use scalar::Scalar;

/// `f64` aliases; the concrete types the CLI and the file formats use.
pub type Dataset = metric::Dataset<f64>;
pub type BoundedInstanceParams = metric::BoundedInstanceParams<f64>;
pub type PairwiseStats = metric::PairwiseStats<f64>;
pub type AvgEmbedding = embed::AvgEmbedding<f64>;
pub type EmbedVerifyReport = embed::EmbedVerifyReport<f64>;
pub type CenterPolicy = embed::CenterPolicy<f64>;
pub type CenterScanResult = embed::CenterScanResult<f64>;
pub type LshFunction = lsh::LshFunction<f64>;
pub type LshParams = lsh::LshParams<f64>;
pub type IndexParams = forest::IndexParams<f64>;
pub type TreeNode = forest::TreeNode<f64>;
pub type Forest = forest::Forest<f64>;
pub type QueryResult = forest::QueryResult<f64>;
pub type PlantedInstance = eval::PlantedInstance<f64>;
pub use eval::EvalReport;
