//! Inspection of learned embeddings: projection, clustering, and
//! per-cluster behavioural profiles.

pub mod kmeans;
pub mod pca;
pub mod plot;
pub mod profile;
pub mod stats;

pub use kmeans::{elbow_select, kmeans_plus_plus, lloyd, lloyd_kmeans, minibatch_kmeans, ElbowReport, KMeansModel};
pub use pca::{pca_fit, ProjectionModel};
pub use plot::{line_svg, scatter_svg, Series};
pub use profile::{profile_partitions, ClusterProfile, MeanCi, PartitionProfile, Quartiles, SessionSummary};
pub use stats::{project, random_orthogonal, silhouette, spearman};

use crate::error::Result;

/// Projects through a fitted model; free-function form of
/// [`ProjectionModel::transform`].
pub fn pca_transform(model: &ProjectionModel, v: &[f64]) -> Result<[f64; 2]> {
    model.transform(v)
}
