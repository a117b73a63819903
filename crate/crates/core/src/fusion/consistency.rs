use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::raster::{global_frame, MaskRecord, PixelSet, Scale, TileGrid, TileId};
use crate::{Error, Result};

/// Thresholds deciding whether two copies of a mask seen by overlapping
/// tiles agree. IoU is measured inside the shared overlap window only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsistencyConfig {
    pub iou_match: f64,
    pub iou_conflict_floor: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            iou_match: 0.95,
            iou_conflict_floor: 0.10,
        }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.iou_conflict_floor
            && self.iou_conflict_floor < self.iou_match
            && self.iou_match <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "need 0 < iou_conflict_floor ({}) < iou_match ({}) <= 1",
                self.iou_conflict_floor, self.iou_match
            )))
        }
    }
}

/// Outcome of overlap reconciliation.
#[derive(Debug, Clone, Default)]
pub struct OverlapReport {
    /// Surviving masks in canonical order.
    pub kept: Vec<MaskRecord>,
    /// Ids dropped because a larger consistent copy survived.
    pub duplicates: Vec<u64>,
    /// Ids discarded because they disagree with a copy in another tile.
    pub conflicts: Vec<u64>,
}

/// Deduplicates fine-scale masks across overlapping tiles.
pub fn resolve_overlap_tiles(
    fine_masks: &[MaskRecord],
    grid: &TileGrid,
    cfg: &ConsistencyConfig,
) -> Result<Vec<MaskRecord>> {
    Ok(resolve_overlap_report(fine_masks, grid, cfg)?.kept)
}

pub fn resolve_overlap_report(
    fine_masks: &[MaskRecord],
    grid: &TileGrid,
    cfg: &ConsistencyConfig,
) -> Result<OverlapReport> {
    cfg.validate()?;
    grid.validate()?;
    let mut pixels = Vec::with_capacity(fine_masks.len());
    let mut by_tile: BTreeMap<TileId, Vec<usize>> = BTreeMap::new();
    for (i, r) in fine_masks.iter().enumerate() {
        if r.scale != Scale::Fine {
            return Err(Error::InvalidArgument(format!(
                "mask {} has scale {:?}, expected fine",
                r.id, r.scale
            )));
        }
        pixels.push(global_frame(r, grid)?.to_pixels());
        by_tile.entry(r.tile).or_default().push(i);
    }

    let n = fine_masks.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut conflicted = vec![false; n];
    let reach = grid.tile_size.div_ceil(grid.stride()) as i64 - 1;

    for (&ta, members_a) in &by_tile {
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (r, c) = (ta.0 as i64 + dr, ta.1 as i64 + dc);
                if r < 0 || c < 0 {
                    continue;
                }
                let tb = (r as u32, c as u32);
                if tb <= ta {
                    continue;
                }
                let Some(members_b) = by_tile.get(&tb) else {
                    continue;
                };
                let Some(window) = grid.tile_rect(ta).intersection(&grid.tile_rect(tb)) else {
                    continue;
                };
                let clipped_b: Vec<(usize, PixelSet)> = members_b
                    .iter()
                    .map(|&j| (j, pixels[j].clip(window)))
                    .filter(|(_, p)| !p.is_empty())
                    .collect();
                for &i in members_a {
                    let a = pixels[i].clip(window);
                    if a.is_empty() {
                        continue;
                    }
                    let a_box = a.bbox().expect("non-empty");
                    for (j, b) in &clipped_b {
                        if !a_box.intersects(&b.bbox().expect("non-empty")) {
                            continue;
                        }
                        let inter = a.intersection(b).area();
                        let union = a.area() + b.area() - inter;
                        let iou = inter as f64 / union as f64;
                        if iou >= cfg.iou_match {
                            union_sets(&mut parent, i, *j);
                        } else if iou > cfg.iou_conflict_floor {
                            conflicted[i] = true;
                            conflicted[*j] = true;
                        }
                    }
                }
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut keep = BTreeSet::new();
    let mut duplicates = Vec::new();
    for members in groups.values() {
        let survivor = members
            .iter()
            .copied()
            .filter(|&i| !conflicted[i])
            .max_by(|&a, &b| {
                pixels[a]
                    .area()
                    .cmp(&pixels[b].area())
                    .then(fine_masks[b].id.cmp(&fine_masks[a].id))
            });
        for &i in members {
            if Some(i) == survivor {
                keep.insert(i);
            } else if !conflicted[i] {
                duplicates.push(fine_masks[i].id);
            }
        }
    }
    let conflicts: Vec<u64> = (0..n)
        .filter(|&i| conflicted[i])
        .map(|i| fine_masks[i].id)
        .collect();

    let mut kept: Vec<MaskRecord> = keep.into_iter().map(|i| fine_masks[i].clone()).collect();
    kept.sort_by_key(canonical_key);
    duplicates.sort_unstable();
    let mut conflicts = conflicts;
    conflicts.sort_unstable();
    log::debug!(
        "overlap resolution: {} in, {} kept, {} duplicates, {} conflicts",
        n,
        kept.len(),
        duplicates.len(),
        conflicts.len()
    );
    Ok(OverlapReport {
        kept,
        duplicates,
        conflicts,
    })
}

pub(crate) fn canonical_key(r: &MaskRecord) -> (u32, u32, i32, i32, u64) {
    let b = r.mask.bbox();
    (r.tile.0, r.tile.1, b.y0, b.x0, r.id)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union_sets(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}
