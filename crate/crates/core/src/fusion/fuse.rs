use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::index::BBoxIndex;
use crate::raster::{global_frame, MaskRecord, PixelSet, Scale, TileGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    /// Decomposition fragments smaller than this are dropped.
    pub min_fragment_px: u32,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            min_fragment_px: 32,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_fragment_px == 0 {
            return Err(Error::Config("min_fragment_px must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct FusionReport {
    /// Fused masks in the shared input frame, ids assigned in row-major
    /// order of each mask's first pixel.
    pub masks: Vec<MaskRecord>,
    /// Fragments below the size floor, left unannotated.
    pub dropped: Vec<PixelSet>,
}

impl FusionReport {
    pub fn dropped_area(&self) -> u64 {
        self.dropped.iter().map(PixelSet::area).sum()
    }
}

/// Mosaic-frame pixel sets for a mask set, optionally upsampled (coarse
/// masks are registered onto the fine pixel grid with `factor = 2`).
pub fn to_mosaic_pixels(
    records: &[MaskRecord],
    grid: &TileGrid,
    factor: u32,
) -> Result<Vec<MaskRecord>> {
    records
        .iter()
        .map(|r| {
            let mut p = global_frame(r, grid)?.to_pixels();
            if factor > 1 {
                p = p.upsample(factor);
            }
            Ok(MaskRecord {
                id: r.id,
                tile: (0, 0),
                scale: r.scale,
                mask: p.to_mask().ok_or(Error::EmptyMask)?,
            })
        })
        .collect()
}

/// Fuses fine and coarse masks given in one common frame.
pub fn fuse_scales(
    fine: &[MaskRecord],
    coarse: &[MaskRecord],
    cfg: &FusionConfig,
) -> Result<Vec<MaskRecord>> {
    Ok(fuse_scales_report(fine, coarse, cfg)?.masks)
}

enum Piece {
    Whole(PixelSet),
    Fragment(PixelSet),
}

pub fn fuse_scales_report(
    fine: &[MaskRecord],
    coarse: &[MaskRecord],
    cfg: &FusionConfig,
) -> Result<FusionReport> {
    cfg.validate()?;
    check_scale(fine, Scale::Fine)?;
    check_scale(coarse, Scale::Coarse)?;

    let fine = ordered_pixels(fine);
    let coarse = ordered_pixels(coarse);
    let fine_index = BBoxIndex::new(bboxes(&fine), 64);
    let coarse_index = BBoxIndex::new(bboxes(&coarse), 64);

    // Within a scale, smaller masks claim shared pixels first.
    let own = |sets: &[PixelSet], index: &BBoxIndex, k: usize| -> PixelSet {
        let earlier: Vec<&PixelSet> = index
            .query(&sets[k].bbox().expect("non-empty"))
            .into_iter()
            .filter(|&j| j < k)
            .map(|j| &sets[j])
            .collect();
        if earlier.is_empty() {
            sets[k].clone()
        } else {
            sets[k].difference(&PixelSet::union_all(earlier))
        }
    };
    let fine_own: Vec<PixelSet> = (0..fine.len())
        .into_par_iter()
        .map(|k| own(&fine, &fine_index, k))
        .collect();
    let coarse_own: Vec<PixelSet> = (0..coarse.len())
        .into_par_iter()
        .map(|k| own(&coarse, &coarse_index, k))
        .collect();

    let fine_pieces: Vec<Vec<Piece>> = (0..fine.len())
        .into_par_iter()
        .map(|k| {
            let f = &fine_own[k];
            if f.is_empty() {
                return Vec::new();
            }
            let clipped = f.area() != fine[k].area();
            let mut pieces = Vec::new();
            let mut covered = Vec::new();
            for j in coarse_index.query(&f.bbox().expect("non-empty")) {
                let part = f.intersection(&coarse_own[j]);
                if !part.is_empty() {
                    covered.push(&coarse_own[j]);
                    pieces.push(part);
                }
            }
            if covered.is_empty() {
                return vec![if clipped {
                    Piece::Fragment(f.clone())
                } else {
                    Piece::Whole(f.clone())
                }];
            }
            let outside = f.difference(&PixelSet::union_all(covered));
            if !outside.is_empty() {
                pieces.push(outside);
            }
            if pieces.len() == 1 && !clipped {
                vec![Piece::Whole(pieces.pop().expect("one piece"))]
            } else {
                pieces.into_iter().map(Piece::Fragment).collect()
            }
        })
        .collect();

    let coarse_pieces: Vec<Vec<Piece>> = (0..coarse.len())
        .into_par_iter()
        .map(|k| {
            let c = &coarse_own[k];
            if c.is_empty() {
                return Vec::new();
            }
            let overlapping: Vec<&PixelSet> = fine_index
                .query(&c.bbox().expect("non-empty"))
                .into_iter()
                .map(|j| &fine[j])
                .collect();
            let residual = if overlapping.is_empty() {
                c.clone()
            } else {
                c.difference(&PixelSet::union_all(overlapping))
            };
            let untouched = residual.area() == coarse[k].area();
            if untouched {
                vec![Piece::Whole(residual)]
            } else {
                residual
                    .components()
                    .into_iter()
                    .map(Piece::Fragment)
                    .collect()
            }
        })
        .collect();

    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for piece in fine_pieces.into_iter().chain(coarse_pieces).flatten() {
        match piece {
            Piece::Whole(p) => kept.push(p),
            Piece::Fragment(p) if p.area() >= cfg.min_fragment_px as u64 => kept.push(p),
            Piece::Fragment(p) => dropped.push(p),
        }
    }
    // Outputs are disjoint, so the first pixel orders them uniquely.
    kept.sort_by_key(|p| {
        let s = p.spans()[0];
        (s.y, s.x0)
    });
    let masks = kept
        .iter()
        .enumerate()
        .map(|(i, p)| MaskRecord {
            id: i as u64 + 1,
            tile: (0, 0),
            scale: Scale::Fused,
            mask: p.to_mask().expect("non-empty piece"),
        })
        .collect();
    Ok(FusionReport { masks, dropped })
}

/// Re-anchors mosaic-frame fused masks to the tile of `grid` holding each
/// mask's centroid.
pub fn anchor_to_grid(records: &[MaskRecord], grid: &TileGrid) -> Vec<MaskRecord> {
    records
        .iter()
        .filter_map(|r| MaskRecord::anchored(r.id, r.scale, &r.mask.to_pixels(), grid))
        .collect()
}

fn check_scale(records: &[MaskRecord], want: Scale) -> Result<()> {
    match records.iter().find(|r| r.scale != want) {
        Some(r) => Err(Error::InvalidArgument(format!(
            "mask {} has scale {:?}, expected {:?}",
            r.id, r.scale, want
        ))),
        None => Ok(()),
    }
}

/// Pixel sets sorted by (area, id).
fn ordered_pixels(records: &[MaskRecord]) -> Vec<PixelSet> {
    let mut order: Vec<&MaskRecord> = records.iter().collect();
    order.sort_by_key(|r| (r.area_px(), r.id));
    order.into_iter().map(|r| r.mask.to_pixels()).collect()
}

fn bboxes(sets: &[PixelSet]) -> Vec<crate::raster::BBox> {
    sets.iter().map(|p| p.bbox().expect("non-empty")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BBox;

    fn rec(id: u64, scale: Scale, p: &PixelSet) -> MaskRecord {
        MaskRecord {
            id,
            tile: (0, 0),
            scale,
            mask: p.to_mask().unwrap(),
        }
    }

    fn rect(x: i32, y: i32, w: u32, h: u32) -> PixelSet {
        PixelSet::from_rect(BBox::new(x, y, w, h))
    }

    fn no_floor() -> FusionConfig {
        FusionConfig { min_fragment_px: 1 }
    }

    #[test]
    fn empty_coarse_retags_fine() {
        let fine: Vec<_> = (0..4)
            .map(|i| rec(10 + i, Scale::Fine, &rect(i as i32 * 10, 0, 6, 6)))
            .collect();
        let out = fuse_scales(&fine, &[], &FusionConfig::default()).unwrap();
        assert_eq!(out.len(), 4);
        for (o, f) in out.iter().zip(&fine) {
            assert_eq!(o.scale, Scale::Fused);
            assert_eq!(o.mask, f.mask);
        }
    }

    #[test]
    fn nested_fine_splits_coarse_in_two() {
        let fine = rec(1, Scale::Fine, &rect(3, 3, 4, 4));
        let coarse = rec(2, Scale::Coarse, &rect(0, 0, 10, 10));
        let out = fuse_scales(&[fine], &[coarse], &no_floor()).unwrap();
        let mut areas: Vec<u32> = out.iter().map(|r| r.area_px()).collect();
        areas.sort();
        assert_eq!(areas, vec![16, 84]);
    }

    #[test]
    fn l_shaped_overlap_gives_three_parts() {
        let f = rect(0, 0, 6, 6);
        let c = rect(3, 3, 6, 6);
        let out = fuse_scales(
            &[rec(1, Scale::Fine, &f)],
            &[rec(2, Scale::Coarse, &c)],
            &no_floor(),
        )
        .unwrap();
        assert_eq!(out.len(), 3);
        let sets: Vec<PixelSet> = out.iter().map(|r| r.mask.to_pixels()).collect();
        let expected = [f.intersection(&c), f.difference(&c), c.difference(&f)];
        for e in &expected {
            assert!(sets.contains(e));
        }
        assert_eq!(PixelSet::union_all(sets.iter()), f.union(&c));
    }

    #[test]
    fn tiny_fragments_are_dropped() {
        let f = rect(0, 0, 10, 10);
        let c = rect(9, 0, 10, 10); // overlap is a 1-px wide column
        let report = fuse_scales_report(
            &[rec(1, Scale::Fine, &f)],
            &[rec(2, Scale::Coarse, &c)],
            &FusionConfig::default(),
        )
        .unwrap();
        assert_eq!(report.dropped_area(), 10);
        let total: u64 = report.masks.iter().map(|r| r.area_px() as u64).sum();
        assert_eq!(total + report.dropped_area(), f.union(&c).area());
    }

    #[test]
    fn residual_split_into_components() {
        // a fine bar cutting a coarse square into left and right halves
        let c = rect(0, 0, 12, 12);
        let f = rect(5, 0, 2, 12);
        let out = fuse_scales(
            &[rec(1, Scale::Fine, &f)],
            &[rec(2, Scale::Coarse, &c)],
            &no_floor(),
        )
        .unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn overlapping_fine_masks_smaller_wins() {
        let small = rect(0, 0, 4, 4);
        let big = rect(2, 2, 8, 8);
        let out = fuse_scales(
            &[rec(1, Scale::Fine, &big), rec(2, Scale::Fine, &small)],
            &[],
            &no_floor(),
        )
        .unwrap();
        let sets: Vec<PixelSet> = out.iter().map(|r| r.mask.to_pixels()).collect();
        assert!(sets.contains(&small));
        assert!(sets.contains(&big.difference(&small)));
    }

    #[test]
    fn wrong_scale_is_rejected() {
        let f = rec(1, Scale::Coarse, &rect(0, 0, 4, 4));
        assert!(fuse_scales(&[f], &[], &FusionConfig::default()).is_err());
    }

    #[test]
    fn coarse_registration_upsamples() {
        let grid = TileGrid::plain(8, 2, 2).unwrap();
        let coarse = MaskRecord {
            id: 5,
            tile: (1, 1),
            scale: Scale::Coarse,
            mask: rect(1, 1, 2, 2).to_mask().unwrap(),
        };
        let up = to_mosaic_pixels(&[coarse], &grid, 2).unwrap();
        assert_eq!(up[0].mask.to_pixels(), rect(18, 18, 4, 4));
    }
}
