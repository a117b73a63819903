//! Mask fusion: reconcile fine-scale masks across overlapping tiles, then
//! merge fine and coarse mask sets so that finer masks win wherever the two
//! scales disagree.

mod consistency;
mod fuse;
mod index;

pub use consistency::{
    resolve_overlap_report, resolve_overlap_tiles, ConsistencyConfig, OverlapReport,
};
pub use fuse::{
    anchor_to_grid, fuse_scales, fuse_scales_report, to_mosaic_pixels, FusionConfig, FusionReport,
};
