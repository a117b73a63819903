use std::collections::HashMap;

use crate::raster::BBox;

/// Uniform bucket grid over bounding boxes for overlap candidate queries.
pub(crate) struct BBoxIndex {
    cell: i32,
    buckets: HashMap<(i32, i32), Vec<usize>>,
    boxes: Vec<BBox>,
}

impl BBoxIndex {
    pub fn new(boxes: Vec<BBox>, cell: u32) -> Self {
        let cell = cell.max(1) as i32;
        let mut buckets: HashMap<(i32, i32), Vec<usize>> = HashMap::new();
        for (i, b) in boxes.iter().enumerate() {
            for key in cells(b, cell) {
                buckets.entry(key).or_default().push(i);
            }
        }
        Self {
            cell,
            buckets,
            boxes,
        }
    }

    /// Indices of boxes intersecting `b`, ascending and deduplicated.
    pub fn query(&self, b: &BBox) -> Vec<usize> {
        let mut out: Vec<usize> = cells(b, self.cell)
            .filter_map(|k| self.buckets.get(&k))
            .flatten()
            .copied()
            .filter(|&i| self.boxes[i].intersects(b))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn cells(b: &BBox, cell: i32) -> impl Iterator<Item = (i32, i32)> {
    let cx0 = b.x0.div_euclid(cell);
    let cx1 = (b.x1() - 1).div_euclid(cell);
    let cy0 = b.y0.div_euclid(cell);
    let cy1 = (b.y1() - 1).div_euclid(cell);
    (cy0..=cy1).flat_map(move |y| (cx0..=cx1).map(move |x| (x, y)))
}
