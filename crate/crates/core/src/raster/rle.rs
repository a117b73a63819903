use serde::{Deserialize, Serialize};

use super::pixels::{PixelSet, Span};
use crate::{Error, Result};

/// Axis-aligned box `(x0, y0, w, h)` in pixels. The origin is signed so a
/// mask anchored to one tile may extend past that tile's top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i64; 4]", into = "[i64; 4]")]
pub struct BBox {
    pub x0: i32,
    pub y0: i32,
    pub w: u32,
    pub h: u32,
}

impl From<[i64; 4]> for BBox {
    fn from(v: [i64; 4]) -> Self {
        BBox {
            x0: v[0] as i32,
            y0: v[1] as i32,
            w: v[2].max(0) as u32,
            h: v[3].max(0) as u32,
        }
    }
}

impl From<BBox> for [i64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0 as i64, b.y0 as i64, b.w as i64, b.h as i64]
    }
}

impl BBox {
    pub fn new(x0: i32, y0: i32, w: u32, h: u32) -> Self {
        Self { x0, y0, w, h }
    }

    pub fn x1(&self) -> i32 {
        self.x0 + self.w as i32
    }

    pub fn y1(&self) -> i32 {
        self.y0 + self.h as i32
    }

    pub fn pixel_count(&self) -> usize {
        self.w as usize * self.h as usize
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x0 < other.x1() && other.x0 < self.x1() && self.y0 < other.y1() && other.y0 < self.y1()
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1().min(other.x1());
        let y1 = self.y1().min(other.y1());
        (x0 < x1 && y0 < y1).then(|| BBox::new(x0, y0, (x1 - x0) as u32, (y1 - y0) as u32))
    }

    pub fn translate(&self, dx: i32, dy: i32) -> BBox {
        BBox::new(self.x0 + dx, self.y0 + dy, self.w, self.h)
    }
}

/// Object footprint stored COCO-style: alternating background/foreground run
/// lengths, row-major inside `bbox`, always starting with a (possibly empty)
/// background run.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RunLengthMask {
    bbox: BBox,
    runs: Vec<u32>,
    area: u32,
}

impl RunLengthMask {
    /// Builds a mask from raw parts, rejecting anything not in canonical form.
    pub fn from_parts(bbox: BBox, runs: Vec<u32>) -> Result<Self> {
        if bbox.w == 0 || bbox.h == 0 {
            return Err(Error::NonCanonicalRle(format!(
                "degenerate bbox {}x{}",
                bbox.w, bbox.h
            )));
        }
        if runs.len() < 2 {
            return Err(Error::NonCanonicalRle(
                "fewer than two runs means no foreground".into(),
            ));
        }
        if let Some(i) = runs.iter().skip(1).position(|&r| r == 0) {
            return Err(Error::NonCanonicalRle(format!(
                "zero-length run at index {}",
                i + 1
            )));
        }
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        if total != bbox.pixel_count() as u64 {
            return Err(Error::NonCanonicalRle(format!(
                "runs cover {total} pixels, bbox holds {}",
                bbox.pixel_count()
            )));
        }
        let area: u64 = runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum();
        Ok(Self {
            bbox,
            runs,
            area: area as u32,
        })
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    /// Foreground pixel count.
    pub fn area(&self) -> u32 {
        self.area
    }

    /// Row-major foreground flags over the bbox.
    pub fn decode(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.bbox.pixel_count());
        for (i, &r) in self.runs.iter().enumerate() {
            out.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
        }
        out
    }

    /// Foreground spans in absolute coordinates, sorted by row then column.
    pub fn spans(&self) -> Vec<Span> {
        let w = self.bbox.w as u64;
        let mut out = Vec::new();
        let mut cursor = 0u64;
        for (i, &r) in self.runs.iter().enumerate() {
            let r = r as u64;
            if i % 2 == 1 {
                let mut start = cursor;
                let end = cursor + r;
                while start < end {
                    let row = start / w;
                    let row_end = ((row + 1) * w).min(end);
                    let x0 = (start - row * w) as i32;
                    let x1 = (row_end - row * w) as i32;
                    out.push(Span {
                        y: self.bbox.y0 + row as i32,
                        x0: self.bbox.x0 + x0,
                        x1: self.bbox.x0 + x1,
                    });
                    start = row_end;
                }
            }
            cursor += r;
        }
        out
    }

    pub fn to_pixels(&self) -> PixelSet {
        PixelSet::from_sorted_spans(self.spans())
    }

    pub fn translate(&self, dx: i32, dy: i32) -> RunLengthMask {
        RunLengthMask {
            bbox: self.bbox.translate(dx, dy),
            runs: self.runs.clone(),
            area: self.area,
        }
    }

    /// Foreground test at absolute coordinates.
    pub fn contains(&self, x: i32, y: i32) -> bool {
        let b = self.bbox;
        if x < b.x0 || y < b.y0 || x >= b.x1() || y >= b.y1() {
            return false;
        }
        let idx = (y - b.y0) as u64 * b.w as u64 + (x - b.x0) as u64;
        let mut cursor = 0u64;
        for (i, &r) in self.runs.iter().enumerate() {
            cursor += r as u64;
            if idx < cursor {
                return i % 2 == 1;
            }
        }
        false
    }
}

/// Encodes a row-major bitmap covering `bbox`. The bbox is kept as given,
/// not shrunk to the foreground.
pub fn rle_encode(bitmap: &[bool], bbox: BBox) -> Result<RunLengthMask> {
    if bitmap.len() != bbox.pixel_count() {
        return Err(Error::BitmapSize {
            expected: bbox.pixel_count(),
            got: bitmap.len(),
        });
    }
    let mut runs = Vec::new();
    let mut current = false;
    let mut count = 0u32;
    for &px in bitmap {
        if px != current {
            runs.push(count);
            count = 0;
            current = px;
        }
        count += 1;
    }
    runs.push(count);
    if runs.len() < 2 {
        return Err(Error::EmptyMask);
    }
    RunLengthMask::from_parts(bbox, runs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Disjoint,
    Equal,
    AInsideB,
    BInsideA,
    Partial,
}

impl Relation {
    /// The relation seen with the operands swapped.
    pub fn mirrored(self) -> Relation {
        match self {
            Relation::AInsideB => Relation::BInsideA,
            Relation::BInsideA => Relation::AInsideB,
            r => r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskRelation {
    pub relation: Relation,
    pub intersection_area: u64,
}

/// Classifies how two masks in a shared frame overlap.
pub fn mask_relation(a: &RunLengthMask, b: &RunLengthMask) -> MaskRelation {
    let inter = if a.bbox().intersects(&b.bbox()) {
        a.to_pixels().intersection(&b.to_pixels()).area()
    } else {
        0
    };
    let (aa, ab) = (a.area() as u64, b.area() as u64);
    let relation = if inter == 0 {
        Relation::Disjoint
    } else if inter == aa && inter == ab {
        Relation::Equal
    } else if inter == aa {
        Relation::AInsideB
    } else if inter == ab {
        Relation::BInsideA
    } else {
        Relation::Partial
    };
    MaskRelation {
        relation,
        intersection_area: inter,
    }
}
