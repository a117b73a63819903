use serde::{Deserialize, Serialize};

use crate::clustering::majority_vote_label;
use crate::raster::{
    global_frame, BBox, ClassSchema, LabelRaster, MaskRecord, PixelSet, RunLengthMask, TileGrid,
    TileId, IGNORE_ID,
};
use crate::{Error, Result};

/// Snaps a tile prediction to its object masks: every mask is painted with
/// the majority predicted class under it; pixels outside all masks keep
/// the raw prediction. Masks are in the prediction's frame.
pub fn draft_annotation(prediction: &LabelRaster, masks: &[MaskRecord]) -> LabelRaster {
    let mut out = prediction.clone();
    for m in masks {
        let pixels = m.mask.to_pixels();
        let class = majority_vote_label(prediction, &pixels);
        if class != IGNORE_ID {
            out.paint(&pixels, class);
        }
    }
    out
}

/// Masks whose footprint touches `tile`, re-expressed in that tile's frame.
pub fn masks_in_tile(
    masks: &[MaskRecord],
    grid: &TileGrid,
    tile: TileId,
) -> Result<Vec<MaskRecord>> {
    grid.check_tile(tile)?;
    let rect = grid.tile_rect(tile);
    let mut out = Vec::new();
    for r in masks {
        let g = global_frame(r, grid)?;
        if g.bbox().intersects(&rect) {
            out.push(MaskRecord {
                tile,
                mask: g.translate(-rect.x0, -rect.y0),
                ..r.clone()
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditRegion {
    Rect(BBox),
    Mask(MaskShape),
}

/// Wire form of a mask region: `{"bbox": [x0, y0, w, h], "rle": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MaskShapeLine", into = "MaskShapeLine")]
pub struct MaskShape(pub RunLengthMask);

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskShapeLine {
    bbox: BBox,
    rle: Vec<u32>,
}

impl TryFrom<MaskShapeLine> for MaskShape {
    type Error = Error;
    fn try_from(l: MaskShapeLine) -> Result<Self> {
        RunLengthMask::from_parts(l.bbox, l.rle).map(MaskShape)
    }
}

impl From<MaskShape> for MaskShapeLine {
    fn from(m: MaskShape) -> Self {
        MaskShapeLine {
            bbox: m.0.bbox(),
            rle: m.0.runs().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    #[serde(flatten)]
    pub region: EditRegion,
    pub class: u8,
}

impl EditRegion {
    fn pixels(&self) -> PixelSet {
        match self {
            EditRegion::Rect(b) => PixelSet::from_rect(*b),
            EditRegion::Mask(m) => m.0.to_pixels(),
        }
    }

    fn bbox(&self) -> BBox {
        match self {
            EditRegion::Rect(b) => *b,
            EditRegion::Mask(m) => m.0.bbox(),
        }
    }
}

/// Applies manual corrections in order; later edits win where they
/// overlap earlier ones.
pub fn apply_refinement(
    draft: &LabelRaster,
    edits: &[Edit],
    schema: &ClassSchema,
) -> Result<LabelRaster> {
    let bounds = BBox::new(0, 0, draft.width(), draft.height());
    for e in edits {
        schema.check(e.class)?;
        let b = e.region.bbox();
        if b.intersection(&bounds) != Some(b) {
            return Err(Error::InvalidArgument(format!(
                "edit region {:?} leaves the {}x{} tile",
                b,
                draft.width(),
                draft.height()
            )));
        }
    }
    let mut out = draft.clone();
    for e in edits {
        out.paint(&e.region.pixels(), e.class);
    }
    Ok(out)
}
