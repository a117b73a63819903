use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Annotation actions needed per labeling scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub n_masks: u64,
    pub n_clusters: u64,
    /// Polygon-style labeling, four clicks per object.
    pub pixel_cost: u64,
    /// One selection per mask.
    pub mask_cost: u64,
    /// One decision per cluster.
    pub mcae_cost: u64,
    pub avg_masks_per_cluster: f64,
}

impl CostReport {
    /// Cluster-level cost relative to mask-level cost.
    pub fn mcae_to_mask_ratio(&self) -> f64 {
        self.mcae_cost as f64 / self.mask_cost as f64
    }
}

pub fn cost_report(n_masks: u64, n_clusters: u64) -> Result<CostReport> {
    if n_clusters == 0 {
        return Err(Error::InvalidArgument(
            "cost report needs at least one cluster".into(),
        ));
    }
    Ok(CostReport {
        n_masks,
        n_clusters,
        pixel_cost: 4 * n_masks,
        mask_cost: n_masks,
        mcae_cost: n_clusters,
        avg_masks_per_cluster: n_masks as f64 / n_clusters as f64,
    })
}
