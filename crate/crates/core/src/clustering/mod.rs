//! Density clustering of mask features inside spatial tile windows, with
//! purity scoring against a reference label raster.

mod dbscan;
mod window;

pub use dbscan::{dbscan, DbscanLabels};
pub use window::{
    hierarchical_cluster, majority_vote_label, read_candidates, window_cluster, write_candidates,
    ClusterCandidate, ClusterConfig, HierarchicalClusters, Stage, Window,
};
