//! Per-mask feature vectors: the table contract shared by learned and
//! handcrafted features, the MCFT interchange file, a deterministic
//! color/shape descriptor, and the crop-consistency score.

mod descriptor;
mod loss;
mod mcft;
mod table;

pub use descriptor::{describe_masks, handcrafted_descriptor, DESCRIPTOR_DIM};
pub use loss::{crop_consistency_score, ConsistencyLossConfig, FeatureMap};
pub use mcft::{export_features, import_features, read_features, write_features};
pub use table::{cosine_distance, FeatureTable, UNIT_NORM_TOLERANCE};
