use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};

use crate::raster::{BBox, PixelSet};
use crate::{Error, Result};

const OUTLINE: Rgb<u8> = Rgb([255, 230, 0]);
const OUTLINE_WIDTH: u32 = 2;

/// Crop window for a mask thumbnail: the mask bbox grown by a quarter of
/// its size on each side, clamped to `bounds`.
pub fn thumbnail_window(mask_bbox: BBox, bounds: BBox) -> Option<BBox> {
    let px = (mask_bbox.w as f64 * 0.25).round() as i32;
    let py = (mask_bbox.h as f64 * 0.25).round() as i32;
    let grown = BBox::new(
        mask_bbox.x0 - px,
        mask_bbox.y0 - py,
        mask_bbox.w + 2 * px as u32,
        mask_bbox.h + 2 * py as u32,
    );
    grown.intersection(&bounds)
}

/// Mask pixels within `width` 4-steps of the mask's outside.
pub fn inner_contour(mask: &PixelSet, width: u32) -> PixelSet {
    let mut core = mask.clone();
    for _ in 0..width {
        core = [(1, 0), (-1, 0), (0, 1), (0, -1)]
            .iter()
            .fold(core.clone(), |acc, &(dx, dy)| {
                acc.intersection(&core.translate(dx, dy))
            });
    }
    mask.difference(&core)
}

/// PNG thumbnail of a mask (mosaic coordinates) over the mosaic image.
/// `tile` is the mask's tile rectangle; context padding never leaves the
/// union of the tile and the mask bbox, nor the image.
pub fn render_thumbnail(image: &RgbImage, mask: &PixelSet, tile: BBox) -> Result<Vec<u8>> {
    let b = mask.bbox().ok_or(Error::EmptyMask)?;
    let hull = BBox::new(
        tile.x0.min(b.x0),
        tile.y0.min(b.y0),
        (tile.x1().max(b.x1()) - tile.x0.min(b.x0)) as u32,
        (tile.y1().max(b.y1()) - tile.y0.min(b.y0)) as u32,
    );
    let bounds = hull
        .intersection(&BBox::new(0, 0, image.width(), image.height()))
        .ok_or(Error::MaskOutOfBounds(0))?;
    let win = thumbnail_window(b, bounds).ok_or(Error::MaskOutOfBounds(0))?;
    let mut out =
        image::imageops::crop_imm(image, win.x0 as u32, win.y0 as u32, win.w, win.h).to_image();
    for (x, y) in inner_contour(&mask.clip(win), OUTLINE_WIDTH).pixels() {
        out.put_pixel((x - win.x0) as u32, (y - win.y0) as u32, OUTLINE);
    }
    let mut buf = Cursor::new(Vec::new());
    out.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}
