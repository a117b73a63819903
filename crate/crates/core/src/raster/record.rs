use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::{TileGrid, TileId};
use super::pixels::PixelSet;
use super::rle::{BBox, RunLengthMask};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Fine,
    Coarse,
    Fused,
}

/// A mask with its identity and tile address. The mask is stored in the
/// tile-local frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRecord {
    pub id: u64,
    pub tile: TileId,
    pub scale: Scale,
    pub mask: RunLengthMask,
}

impl MaskRecord {
    pub fn area_px(&self) -> u32 {
        self.mask.area()
    }

    /// Re-anchors a mosaic-frame pixel set to the tile of `grid` that holds
    /// its centroid.
    pub fn anchored(id: u64, scale: Scale, pixels: &PixelSet, grid: &TileGrid) -> Option<Self> {
        let (cx, cy) = pixels.centroid()?;
        let tile = grid.tile_of_point(cx, cy);
        let (ox, oy) = grid.origin(tile);
        let mask = pixels.translate(-ox, -oy).to_mask()?;
        Some(Self {
            id,
            tile,
            scale,
            mask,
        })
    }
}

/// The record's mask translated into mosaic coordinates.
pub fn global_frame(record: &MaskRecord, grid: &TileGrid) -> Result<RunLengthMask> {
    grid.check_tile(record.tile)?;
    let (dx, dy) = grid.origin(record.tile);
    Ok(record.mask.translate(dx, dy))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: u64,
    tile: [u32; 2],
    scale: Scale,
    bbox: BBox,
    rle: Vec<u32>,
}

impl From<&MaskRecord> for RecordLine {
    fn from(r: &MaskRecord) -> Self {
        RecordLine {
            id: r.id,
            tile: [r.tile.0, r.tile.1],
            scale: r.scale,
            bbox: r.mask.bbox(),
            rle: r.mask.runs().to_vec(),
        }
    }
}

impl Serialize for MaskRecord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RecordLine::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for MaskRecord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let line = RecordLine::deserialize(d)?;
        let mask =
            RunLengthMask::from_parts(line.bbox, line.rle).map_err(serde::de::Error::custom)?;
        Ok(MaskRecord {
            id: line.id,
            tile: (line.tile[0], line.tile[1]),
            scale: line.scale,
            mask,
        })
    }
}

/// Reads a JSON-lines mask set. Ids must be unique.
pub fn read_mask_set(path: &Path) -> Result<Vec<MaskRecord>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MaskRecord = serde_json::from_str(&line).map_err(|e| {
            Error::format(
                "mask set",
                format!("{}:{}: {e}", path.display(), lineno + 1),
            )
        })?;
        if !seen.insert(rec.id) {
            return Err(Error::DuplicateId(rec.id));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_mask_set(path: &Path, records: &[MaskRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
