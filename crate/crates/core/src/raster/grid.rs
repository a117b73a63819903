use serde::{Deserialize, Serialize};

use super::rle::BBox;
use crate::{Error, Result};

/// `(row, col)` tile address.
pub type TileId = (u32, u32);

/// Regular tiling of a mosaic. Adjacent tiles start `stride` pixels apart,
/// where `stride = tile_size * (1 - overlap_ratio)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub tile_size: u32,
    pub rows: u32,
    pub cols: u32,
    pub overlap_ratio: f64,
}

impl TileGrid {
    pub fn new(tile_size: u32, rows: u32, cols: u32, overlap_ratio: f64) -> Result<Self> {
        let g = Self {
            tile_size,
            rows,
            cols,
            overlap_ratio,
        };
        g.validate()?;
        Ok(g)
    }

    /// Non-overlapping grid.
    pub fn plain(tile_size: u32, rows: u32, cols: u32) -> Result<Self> {
        Self::new(tile_size, rows, cols, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::Config("tile_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_ratio) {
            return Err(Error::Config(format!(
                "overlap_ratio {} outside [0, 1)",
                self.overlap_ratio
            )));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("grid needs at least one tile".into()));
        }
        Ok(())
    }

    pub fn stride(&self) -> u32 {
        ((self.tile_size as f64 * (1.0 - self.overlap_ratio)).round() as u32).max(1)
    }

    pub fn tile_count(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn contains_tile(&self, tile: TileId) -> bool {
        tile.0 < self.rows && tile.1 < self.cols
    }

    pub fn check_tile(&self, tile: TileId) -> Result<()> {
        if self.contains_tile(tile) {
            Ok(())
        } else {
            Err(Error::TileOutOfRange {
                row: tile.0,
                col: tile.1,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    /// Top-left pixel `(x, y)` of a tile in mosaic coordinates.
    pub fn origin(&self, tile: TileId) -> (i32, i32) {
        let s = self.stride() as i32;
        (tile.1 as i32 * s, tile.0 as i32 * s)
    }

    pub fn tile_rect(&self, tile: TileId) -> BBox {
        let (x, y) = self.origin(tile);
        BBox::new(x, y, self.tile_size, self.tile_size)
    }

    /// Mosaic `(width, height)` covered by the grid.
    pub fn mosaic_size(&self) -> (u32, u32) {
        let s = self.stride();
        (
            (self.cols - 1) * s + self.tile_size,
            (self.rows - 1) * s + self.tile_size,
        )
    }

    /// Tiles in row-major order.
    pub fn tiles(&self) -> impl Iterator<Item = TileId> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| (r, c)))
    }

    pub fn index(&self, tile: TileId) -> usize {
        tile.0 as usize * self.cols as usize + tile.1 as usize
    }

    pub fn tile_at(&self, index: usize) -> TileId {
        (
            (index / self.cols as usize) as u32,
            (index % self.cols as usize) as u32,
        )
    }

    /// Tile whose stride cell holds the point, clamped to the grid. For a
    /// non-overlapping grid this is the unique tile containing the point.
    pub fn tile_of_point(&self, x: f64, y: f64) -> TileId {
        let s = self.stride() as f64;
        let clamp = |v: f64, n: u32| -> u32 {
            if v <= 0.0 {
                0
            } else {
                ((v / s).floor() as u32).min(n - 1)
            }
        };
        (clamp(y, self.rows), clamp(x, self.cols))
    }

    /// Non-overlapping grid with the same tile size over the same mosaic.
    pub fn annotation_grid(&self) -> TileGrid {
        let (w, h) = self.mosaic_size();
        let t = self.tile_size;
        TileGrid {
            tile_size: t,
            rows: h.div_ceil(t),
            cols: w.div_ceil(t),
            overlap_ratio: 0.0,
        }
    }

    /// Grid with the given overlap covering the same mosaic as this one.
    pub fn with_overlap(&self, overlap_ratio: f64) -> Result<TileGrid> {
        let (w, h) = self.mosaic_size();
        let mut g = TileGrid {
            tile_size: self.tile_size,
            rows: 1,
            cols: 1,
            overlap_ratio,
        };
        g.validate()?;
        let s = g.stride();
        let count = |extent: u32| -> u32 {
            if extent <= g.tile_size {
                1
            } else {
                (extent - g.tile_size).div_ceil(s) + 1
            }
        };
        g.rows = count(h);
        g.cols = count(w);
        Ok(g)
    }
}
