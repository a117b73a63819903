use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dbscan::dbscan;
use crate::features::FeatureTable;
use crate::raster::{global_frame, LabelRaster, MaskRecord, PixelSet, TileGrid, IGNORE_ID};
use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Cosine-distance radius.
    pub eps: f64,
    pub min_pts: u32,
    pub purity_threshold: f64,
    pub small_window: u32,
    pub large_window: u32,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            eps: 0.15,
            min_pts: 5,
            purity_threshold: 0.90,
            small_window: 3,
            large_window: 5,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 2.0) {
            return Err(Error::Config(format!("eps {} outside (0, 2)", self.eps)));
        }
        if self.min_pts < 2 {
            return Err(Error::Config("min_pts must be at least 2".into()));
        }
        if !(self.purity_threshold > 0.5 && self.purity_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "purity_threshold {} outside (0.5, 1]",
                self.purity_threshold
            )));
        }
        if self.small_window == 0 || self.small_window >= self.large_window {
            return Err(Error::Config(
                "windows must satisfy 0 < small_window < large_window".into(),
            ));
        }
        Ok(())
    }

    pub fn span(&self, stage: Stage) -> u32 {
        match stage {
            Stage::Small => self.small_window,
            Stage::Large => self.large_window,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Small,
    Large,
}

/// Window of `span x span` tiles whose top-left tile is `(row0, col0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u32; 3]", into = "[u32; 3]")]
pub struct Window {
    pub row0: u32,
    pub col0: u32,
    pub span: u32,
}

impl From<[u32; 3]> for Window {
    fn from(a: [u32; 3]) -> Self {
        Window {
            row0: a[0],
            col0: a[1],
            span: a[2],
        }
    }
}

impl From<Window> for [u32; 3] {
    fn from(w: Window) -> Self {
        [w.row0, w.col0, w.span]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterCandidate {
    pub id: u64,
    pub stage: Stage,
    pub window: Window,
    pub member_ids: Vec<u64>,
    pub dominant_class: u8,
    pub purity: f64,
    pub suggested: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalClusters {
    pub stage1: Vec<ClusterCandidate>,
    pub stage2: Vec<ClusterCandidate>,
    pub residual: Vec<u64>,
}

impl HierarchicalClusters {
    /// Suggested candidates of both stages, stage 1 first.
    pub fn suggested(&self) -> impl Iterator<Item = &ClusterCandidate> {
        self.stage1.iter().chain(&self.stage2)
    }
}

/// Most frequent non-ignore class under the mask. Ties go to the smaller
/// class id; a mask covering only ignore pixels (or nothing in bounds)
/// yields the ignore id.
pub fn majority_vote_label(reference: &LabelRaster, mask: &PixelSet) -> u8 {
    let mut counts = [0u64; 256];
    for v in reference.values_under(mask) {
        counts[v as usize] += 1;
    }
    counts[IGNORE_ID as usize] = 0;
    let mut best = IGNORE_ID;
    let mut best_n = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > best_n {
            best = c as u8;
            best_n = n;
        }
    }
    best
}

/// Clusters masks independently inside non-overlapping windows of the
/// stage's span. Every cluster is returned, suggested or not, numbered from
/// 1 in window order.
pub fn window_cluster<T: Scalar>(
    masks: &[MaskRecord],
    features: &FeatureTable<T>,
    reference: &LabelRaster,
    grid: &TileGrid,
    cfg: &ClusterConfig,
    stage: Stage,
) -> Result<Vec<ClusterCandidate>> {
    cfg.validate()?;
    let span = cfg.span(stage);
    if let Some(r) = masks.iter().find(|r| !features.contains(r.id)) {
        return Err(Error::MissingFeature(r.id));
    }

    let placed: Vec<(u64, Window, u8)> = masks
        .par_iter()
        .map(|r| {
            let pixels = global_frame(r, grid)?.to_pixels();
            let (cx, cy) = pixels.centroid().ok_or(Error::EmptyMask)?;
            let tile = grid.tile_of_point(cx, cy);
            let window = Window {
                row0: tile.0 / span * span,
                col0: tile.1 / span * span,
                span,
            };
            Ok((r.id, window, majority_vote_label(reference, &pixels)))
        })
        .collect::<Result<_>>()?;

    let mut by_window: BTreeMap<Window, Vec<u64>> = BTreeMap::new();
    let mut labels: HashMap<u64, u8> = HashMap::with_capacity(placed.len());
    for (id, w, label) in placed {
        by_window.entry(w).or_default().push(id);
        labels.insert(id, label);
    }

    let eps = T::from_f64_lossy(cfg.eps);
    let min_pts = cfg.min_pts as usize;
    let per_window: Vec<Vec<ClusterCandidate>> = by_window
        .into_par_iter()
        .map(|(window, ids)| {
            let points: Vec<(u64, &[T])> = ids
                .iter()
                .map(|&id| (id, features.get(id).expect("checked above")))
                .collect();
            let found = dbscan(&points, eps, min_pts)?;
            Ok(found
                .clusters()
                .into_iter()
                // a cluster that lost border points to an earlier one can
                // fall below min_pts; it is dissolved into noise
                .filter(|m| m.len() >= min_pts)
                .map(|member_ids| {
                    let (dominant_class, purity) = purity(&member_ids, &labels);
                    ClusterCandidate {
                        id: 0,
                        stage,
                        window,
                        suggested: dominant_class != IGNORE_ID && purity >= cfg.purity_threshold,
                        member_ids,
                        dominant_class,
                        purity,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut out: Vec<ClusterCandidate> = per_window.into_iter().flatten().collect();
    for (i, c) in out.iter_mut().enumerate() {
        c.id = i as u64 + 1;
    }
    Ok(out)
}

/// Dominant reference class and the fraction of members carrying it.
/// Ignore-labeled members count against purity but never dominate unless
/// every member is ignore.
fn purity(members: &[u64], labels: &HashMap<u64, u8>) -> (u8, f64) {
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    for id in members {
        *counts.entry(labels[id]).or_default() += 1;
    }
    let dominant = counts
        .iter()
        .filter(|(&c, _)| c != IGNORE_ID)
        .fold(None, |best: Option<(u8, usize)>, (&c, &n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((c, n)),
        })
        .map_or(IGNORE_ID, |(c, _)| c);
    (dominant, counts[&dominant] as f64 / members.len() as f64)
}

/// Two-stage clustering: suggested clusters from small windows, then the
/// remaining masks re-clustered in large windows. Stage 2 ids continue after
/// stage 1.
pub fn hierarchical_cluster<T: Scalar>(
    masks: &[MaskRecord],
    features: &FeatureTable<T>,
    reference: &LabelRaster,
    grid: &TileGrid,
    cfg: &ClusterConfig,
) -> Result<HierarchicalClusters> {
    let mut stage1: Vec<ClusterCandidate> =
        window_cluster(masks, features, reference, grid, cfg, Stage::Small)?
            .into_iter()
            .filter(|c| c.suggested)
            .collect();
    let taken: BTreeSet<u64> = stage1
        .iter()
        .flat_map(|c| c.member_ids.iter().copied())
        .collect();
    let rest: Vec<MaskRecord> = masks
        .iter()
        .filter(|r| !taken.contains(&r.id))
        .cloned()
        .collect();
    let mut stage2: Vec<ClusterCandidate> =
        window_cluster(&rest, features, reference, grid, cfg, Stage::Large)?
            .into_iter()
            .filter(|c| c.suggested)
            .collect();

    for (i, c) in stage1.iter_mut().chain(stage2.iter_mut()).enumerate() {
        c.id = i as u64 + 1;
    }
    let clustered: BTreeSet<u64> = stage2
        .iter()
        .flat_map(|c| c.member_ids.iter().copied())
        .chain(taken)
        .collect();
    let mut residual: Vec<u64> = masks
        .iter()
        .map(|r| r.id)
        .filter(|id| !clustered.contains(id))
        .collect();
    residual.sort_unstable();
    Ok(HierarchicalClusters {
        stage1,
        stage2,
        residual,
    })
}

pub fn write_candidates(path: &Path, candidates: &[ClusterCandidate]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in candidates {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_candidates(path: &Path) -> Result<Vec<ClusterCandidate>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })?;
    let mut out: Vec<ClusterCandidate> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c: ClusterCandidate = serde_json::from_str(&line).map_err(|e| {
            Error::format(
                "cluster file",
                format!("{}:{}: {e}", path.display(), lineno + 1),
            )
        })?;
        if out.iter().any(|o| o.id == c.id) {
            return Err(Error::format(
                "cluster file",
                format!("duplicate cluster id {}", c.id),
            ));
        }
        out.push(c);
    }
    Ok(out)
}
