//! Engine configuration: one flat TOML file of key/value pairs.
//!
//! ```toml
//! schema = "oem8"
//! tile_size = 1024
//! rows = 10
//! cols = 10
//! overlap_ratio = 0.5
//! eps = 0.15
//! fine_masks = "fine.jsonl"
//! run_dir = "run"
//! ```
//!
//! Relative paths resolve against the directory holding the file. Unknown
//! keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterConfig;
use crate::fusion::{ConsistencyConfig, FusionConfig};
use crate::raster::{ClassSchema, TileGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub schema: String,
    pub tile_size: u32,
    /// Annotation grid size in tiles (non-overlapping).
    pub rows: u32,
    pub cols: u32,
    /// Overlap of the fine-scale generation grid.
    pub overlap_ratio: f64,
    pub pixel_size_m: f64,

    pub iou_match: f64,
    pub iou_conflict_floor: f64,
    pub min_fragment_px: u32,

    pub eps: f64,
    pub min_pts: u32,
    pub purity_threshold: f64,
    pub small_window: u32,
    pub large_window: u32,

    /// SKATER region count; `ceil(tiles / 400)` when unset.
    pub regions: Option<usize>,
    pub n_per_region: usize,
    pub seed: u64,
    /// Label suggested clusters from the ground truth instead of waiting
    /// for a human.
    pub auto_label: bool,

    pub fine_masks: Option<PathBuf>,
    pub coarse_masks: Option<PathBuf>,
    pub image: Option<PathBuf>,
    /// Learned features; handcrafted descriptors are computed when unset.
    pub features: Option<PathBuf>,
    /// Reference labels for cluster purity; defaults to `ground_truth`.
    pub reference: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub prediction: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let consistency = ConsistencyConfig::default();
        let cluster = ClusterConfig::default();
        Self {
            schema: "oem8".into(),
            tile_size: 1024,
            rows: 1,
            cols: 1,
            overlap_ratio: 0.5,
            pixel_size_m: 0.3,
            iou_match: consistency.iou_match,
            iou_conflict_floor: consistency.iou_conflict_floor,
            min_fragment_px: FusionConfig::default().min_fragment_px,
            eps: cluster.eps,
            min_pts: cluster.min_pts,
            purity_threshold: cluster.purity_threshold,
            small_window: cluster.small_window,
            large_window: cluster.large_window,
            regions: None,
            n_per_region: 100,
            seed: 0,
            auto_label: false,
            fine_masks: None,
            coarse_masks: None,
            image: None,
            features: None,
            reference: None,
            ground_truth: None,
            prediction: None,
            run_dir: None,
        }
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::Config(format!("config file {} not found", path.display()))
            }
            _ => e.into(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.fine_masks,
            &mut self.coarse_masks,
            &mut self.image,
            &mut self.features,
            &mut self.reference,
            &mut self.ground_truth,
            &mut self.prediction,
            &mut self.run_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        ClassSchema::by_name(&self.schema)?;
        self.annotation_grid()?;
        self.fine_grid()?;
        self.consistency().validate()?;
        self.fusion().validate()?;
        self.cluster().validate()?;
        if !(self.pixel_size_m > 0.0 && self.pixel_size_m.is_finite()) {
            return Err(Error::Config("pixel_size_m must be positive".into()));
        }
        if let Some(p) = self.regions {
            let tiles = (self.rows * self.cols) as usize;
            if p == 0 || p > tiles {
                return Err(Error::Config(format!("regions {p} outside [1, {tiles}]")));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<ClassSchema> {
        ClassSchema::by_name(&self.schema)
    }

    pub fn annotation_grid(&self) -> Result<TileGrid> {
        TileGrid::plain(self.tile_size, self.rows, self.cols)
    }

    /// Overlapping grid the fine masks are addressed on.
    pub fn fine_grid(&self) -> Result<TileGrid> {
        self.annotation_grid()?.with_overlap(self.overlap_ratio)
    }

    /// Non-overlapping grid over the half-resolution mosaic, on which the
    /// coarse masks are addressed.
    pub fn coarse_grid(&self) -> Result<TileGrid> {
        let (w, h) = self.annotation_grid()?.mosaic_size();
        let t = self.tile_size;
        TileGrid::plain(t, h.div_ceil(2).div_ceil(t), w.div_ceil(2).div_ceil(t))
    }

    pub fn consistency(&self) -> ConsistencyConfig {
        ConsistencyConfig {
            iou_match: self.iou_match,
            iou_conflict_floor: self.iou_conflict_floor,
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            min_fragment_px: self.min_fragment_px,
        }
    }

    pub fn cluster(&self) -> ClusterConfig {
        ClusterConfig {
            eps: self.eps,
            min_pts: self.min_pts,
            purity_threshold: self.purity_threshold,
            small_window: self.small_window,
            large_window: self.large_window,
        }
    }
}
