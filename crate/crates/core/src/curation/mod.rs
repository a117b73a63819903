//! Dense test-set curation: tile embeddings, spatial regionalization,
//! stratified multi-round sampling, and draft/refine bookkeeping.

mod draft;
mod embedding;
mod rounds;
mod sample;
mod skater;

pub use draft::{apply_refinement, draft_annotation, masks_in_tile, Edit, EditRegion, MaskShape};
pub use embedding::{tile_embedding, tile_embeddings, TileEmbedding};
pub use rounds::{Curation, RefinementRound, RoundTile, TileStatus};
pub use sample::{stratified_sample, Sample};
pub use skater::{default_region_count, skater_partition, ssd, RegionPartition};
