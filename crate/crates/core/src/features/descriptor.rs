use image::RgbImage;
use rayon::prelude::*;

use super::table::FeatureTable;
use crate::raster::{global_frame, MaskRecord, PixelSet, RunLengthMask, TileGrid};
use crate::scalar::normalize;
use crate::{Error, Result};

pub const DESCRIPTOR_DIM: usize = 17;

const HUE_BINS: usize = 8;
/// Shape terms are scaled down so color dominates the direction.
const SHAPE_WEIGHT: f32 = 0.25;
/// ln of a 1024x1024 mask, the upper end of the log-area term.
const LOG_AREA_SCALE: f64 = 13.862943611198906;

/// Color and shape descriptor of one mask:
/// `[mean rgb (3), std rgb (3), hue histogram (8), log-area, compactness,
/// elongation]`, L2-normalized. Channels are scaled to `[0, 1]`; the hue
/// histogram holds fractions of mask pixels (gray pixels fall in no bin).
pub fn handcrafted_descriptor(image: &RgbImage, mask: &RunLengthMask) -> Result<Vec<f32>> {
    let pixels = mask.to_pixels();
    let b = mask.bbox();
    if b.x0 < 0 || b.y0 < 0 || b.x1() as u32 > image.width() || b.y1() as u32 > image.height() {
        return Err(Error::MaskOutOfBounds(0));
    }
    Ok(describe_pixels(image, &pixels))
}

fn describe_pixels(image: &RgbImage, pixels: &PixelSet) -> Vec<f32> {
    let area = pixels.area() as f64;
    let mut sum = [0f64; 3];
    let mut sum_sq = [0f64; 3];
    let mut hist = [0f64; HUE_BINS];
    for (x, y) in pixels.pixels() {
        let p = image.get_pixel(x as u32, y as u32).0;
        for c in 0..3 {
            let v = p[c] as f64 / 255.0;
            sum[c] += v;
            sum_sq[c] += v * v;
        }
        if let Some(h) = hue(p) {
            hist[((h / 360.0 * HUE_BINS as f64) as usize).min(HUE_BINS - 1)] += 1.0;
        }
    }
    let mut v = Vec::with_capacity(DESCRIPTOR_DIM);
    let mean: Vec<f64> = sum.iter().map(|s| s / area).collect();
    v.extend(mean.iter().map(|&m| m as f32));
    for c in 0..3 {
        let var = (sum_sq[c] / area - mean[c] * mean[c]).max(0.0);
        v.push(var.sqrt() as f32);
    }
    v.extend(hist.iter().map(|&h| (h / area) as f32));

    let perimeter = boundary_edges(pixels) as f64;
    let bbox = pixels.bbox().expect("non-empty mask");
    let (short, long) = if bbox.w < bbox.h {
        (bbox.w, bbox.h)
    } else {
        (bbox.h, bbox.w)
    };
    v.push(SHAPE_WEIGHT * (area.ln() / LOG_AREA_SCALE) as f32);
    v.push(SHAPE_WEIGHT * (perimeter * perimeter / (16.0 * area)) as f32);
    v.push(SHAPE_WEIGHT * (short as f64 / long as f64) as f32);
    normalize(&mut v);
    v
}

/// HSV hue in degrees, `None` for gray pixels.
fn hue(p: [u8; 3]) -> Option<f64> {
    let [r, g, b] = p.map(|c| c as f64);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0.0 {
        return None;
    }
    let h = if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    Some(h.rem_euclid(360.0))
}

/// Number of pixel edges between the set and its complement.
fn boundary_edges(pixels: &PixelSet) -> u64 {
    let spans = pixels.spans();
    let row_range = |y: i32| {
        let lo = spans.partition_point(|s| s.y < y);
        let hi = spans.partition_point(|s| s.y <= y);
        &spans[lo..hi]
    };
    let mut edges = 0u64;
    for s in spans {
        edges += 2; // left and right ends of the run
        let len = (s.x1 - s.x0) as u64;
        for dy in [-1, 1] {
            let covered: u64 = row_range(s.y + dy)
                .iter()
                .map(|t| (s.x1.min(t.x1) - s.x0.max(t.x0)).max(0) as u64)
                .sum();
            edges += len - covered;
        }
    }
    edges
}

/// Descriptors for every record, computed on the mosaic image.
pub fn describe_masks(
    image: &RgbImage,
    masks: &[MaskRecord],
    grid: &TileGrid,
) -> Result<FeatureTable<f32>> {
    let vectors: Vec<(u64, Vec<f32>)> = masks
        .par_iter()
        .map(|r| {
            let m = global_frame(r, grid)?;
            let v = handcrafted_descriptor(image, &m).map_err(|e| match e {
                Error::MaskOutOfBounds(_) => Error::MaskOutOfBounds(r.id),
                e => e,
            })?;
            Ok((r.id, v))
        })
        .collect::<Result<_>>()?;
    let mut table = FeatureTable::new(DESCRIPTOR_DIM);
    for (id, v) in vectors {
        table.insert_renormalizing(id, v, 1e-3)?;
    }
    Ok(table)
}
