//! Pixel-exact primitives shared by every stage: class schemas, label
//! rasters, run-length masks, tile grids and set algebra over masks.

mod grid;
mod label;
mod pixels;
mod record;
mod rle;
mod schema;

pub use grid::{TileGrid, TileId};
pub use label::{encode_label_png, read_label_png, write_label_png, LabelRaster, RasterMeta};
pub use pixels::{PixelSet, Span};
pub use record::{global_frame, read_mask_set, write_mask_set, MaskRecord, Scale};
pub use rle::{mask_relation, rle_encode, BBox, MaskRelation, Relation, RunLengthMask};
pub use schema::{ClassInfo, ClassSchema, IGNORE_ID};
