//! Cluster-level labeling: the decision log, sparse label export,
//! annotation cost accounting and mask thumbnails for the labeling UI.

mod cost;
mod decision;
mod store;
mod thumbnail;

pub use cost::{cost_report, CostReport};
pub use decision::{ClusterDecision, Verdict, VerdictKind};
pub use store::{
    export_sparse, ClassProgress, Progress, SessionManifest, SessionStore, StageProgress,
    DECISIONS_FILE, SESSION_FILE,
};
pub use thumbnail::{inner_contour, render_thumbnail, thumbnail_window};
