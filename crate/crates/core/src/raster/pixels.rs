use super::rle::{BBox, RunLengthMask};

/// Half-open horizontal run of foreground pixels `[x0, x1)` on row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub y: i32,
    pub x0: i32,
    pub x1: i32,
}

/// Pixel set stored as row spans. Spans are sorted by `(y, x0)` and spans on
/// the same row never touch, so equal sets have equal representations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct PixelSet {
    spans: Vec<Span>,
}

#[derive(Clone, Copy)]
enum SetOp {
    Union,
    Intersection,
    Difference,
}

impl SetOp {
    fn keep(self, a: bool, b: bool) -> bool {
        match self {
            SetOp::Union => a || b,
            SetOp::Intersection => a && b,
            SetOp::Difference => a && !b,
        }
    }
}

impl PixelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Normalizes arbitrary (possibly overlapping, unsorted) spans.
    pub fn from_spans(mut spans: Vec<Span>) -> Self {
        spans.retain(|s| s.x1 > s.x0);
        spans.sort_unstable();
        Self::from_sorted_spans(spans)
    }

    /// Merges touching spans of an already sorted list.
    pub(crate) fn from_sorted_spans(spans: Vec<Span>) -> Self {
        let mut out: Vec<Span> = Vec::with_capacity(spans.len());
        for s in spans {
            if s.x1 <= s.x0 {
                continue;
            }
            match out.last_mut() {
                Some(last) if last.y == s.y && s.x0 <= last.x1 => last.x1 = last.x1.max(s.x1),
                _ => out.push(s),
            }
        }
        Self { spans: out }
    }

    pub fn from_rect(b: BBox) -> Self {
        let spans = (0..b.h as i32)
            .map(|dy| Span {
                y: b.y0 + dy,
                x0: b.x0,
                x1: b.x1(),
            })
            .collect();
        Self::from_sorted_spans(spans)
    }

    pub fn from_pixels(pixels: impl IntoIterator<Item = (i32, i32)>) -> Self {
        Self::from_spans(
            pixels
                .into_iter()
                .map(|(x, y)| Span {
                    y,
                    x0: x,
                    x1: x + 1,
                })
                .collect(),
        )
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn area(&self) -> u64 {
        self.spans.iter().map(|s| (s.x1 - s.x0) as u64).sum()
    }

    pub fn bbox(&self) -> Option<BBox> {
        let first = self.spans.first()?;
        let last = self.spans.last()?;
        let x0 = self.spans.iter().map(|s| s.x0).min()?;
        let x1 = self.spans.iter().map(|s| s.x1).max()?;
        Some(BBox::new(
            x0,
            first.y,
            (x1 - x0) as u32,
            (last.y - first.y + 1) as u32,
        ))
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        let idx = self.spans.partition_point(|s| (s.y, s.x1) <= (y, x));
        self.spans
            .get(idx)
            .is_some_and(|s| s.y == y && s.x0 <= x && x < s.x1)
    }

    pub fn pixels(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        self.spans
            .iter()
            .flat_map(|s| (s.x0..s.x1).map(move |x| (x, s.y)))
    }

    /// Mean pixel position `(x, y)` using pixel centers.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let area = self.area();
        if area == 0 {
            return None;
        }
        let (mut sx, mut sy) = (0f64, 0f64);
        for s in &self.spans {
            let n = (s.x1 - s.x0) as f64;
            // sum of (x + 0.5) over x in [x0, x1)
            sx += n * (s.x0 as f64 + s.x1 as f64) / 2.0;
            sy += n * (s.y as f64 + 0.5);
        }
        Some((sx / area as f64, sy / area as f64))
    }

    pub fn translate(&self, dx: i32, dy: i32) -> PixelSet {
        PixelSet {
            spans: self
                .spans
                .iter()
                .map(|s| Span {
                    y: s.y + dy,
                    x0: s.x0 + dx,
                    x1: s.x1 + dx,
                })
                .collect(),
        }
    }

    /// Nearest-neighbour upsampling: every pixel becomes a `factor`x`factor` block.
    pub fn upsample(&self, factor: u32) -> PixelSet {
        let f = factor as i32;
        let spans = self
            .spans
            .iter()
            .flat_map(|s| {
                (0..f).map(move |dy| Span {
                    y: s.y * f + dy,
                    x0: s.x0 * f,
                    x1: s.x1 * f,
                })
            })
            .collect();
        PixelSet::from_spans(spans)
    }

    pub fn union(&self, other: &PixelSet) -> PixelSet {
        self.combine(other, SetOp::Union)
    }

    pub fn intersection(&self, other: &PixelSet) -> PixelSet {
        self.combine(other, SetOp::Intersection)
    }

    pub fn difference(&self, other: &PixelSet) -> PixelSet {
        self.combine(other, SetOp::Difference)
    }

    pub fn clip(&self, rect: BBox) -> PixelSet {
        let spans = self
            .spans
            .iter()
            .filter(|s| s.y >= rect.y0 && s.y < rect.y1())
            .map(|s| Span {
                y: s.y,
                x0: s.x0.max(rect.x0),
                x1: s.x1.min(rect.x1()),
            })
            .filter(|s| s.x1 > s.x0)
            .collect();
        PixelSet { spans }
    }

    pub fn intersects(&self, other: &PixelSet) -> bool {
        !self.intersection(other).is_empty()
    }

    pub fn union_all<'a>(sets: impl IntoIterator<Item = &'a PixelSet>) -> PixelSet {
        let spans = sets
            .into_iter()
            .flat_map(|s| s.spans.iter().copied())
            .collect();
        PixelSet::from_spans(spans)
    }

    fn rows(&self) -> impl Iterator<Item = (i32, &[Span])> {
        self.spans
            .chunk_by(|a, b| a.y == b.y)
            .map(|chunk| (chunk[0].y, chunk))
    }

    fn combine(&self, other: &PixelSet, op: SetOp) -> PixelSet {
        let mut out = Vec::new();
        let mut a = self.rows().peekable();
        let mut b = other.rows().peekable();
        loop {
            let (y, ra, rb): (i32, &[Span], &[Span]) = match (a.peek(), b.peek()) {
                (None, None) => break,
                (Some(&(ya, sa)), None) => {
                    a.next();
                    (ya, sa, &[])
                }
                (None, Some(&(yb, sb))) => {
                    b.next();
                    (yb, &[], sb)
                }
                (Some(&(ya, sa)), Some(&(yb, sb))) => {
                    if ya < yb {
                        a.next();
                        (ya, sa, &[])
                    } else if yb < ya {
                        b.next();
                        (yb, &[], sb)
                    } else {
                        a.next();
                        b.next();
                        (ya, sa, sb)
                    }
                }
            };
            combine_row(y, ra, rb, op, &mut out);
        }
        PixelSet::from_sorted_spans(out)
    }

    /// 4-connected components, ordered by their first pixel in row-major order.
    pub fn components(&self) -> Vec<PixelSet> {
        let n = self.spans.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let row_starts: Vec<usize> = {
            let mut v = vec![0];
            for i in 1..n {
                if self.spans[i].y != self.spans[i - 1].y {
                    v.push(i);
                }
            }
            v.push(n);
            v
        };
        for w in row_starts.windows(2).zip(row_starts.windows(2).skip(1)) {
            let (cur, next) = (w.0, w.1);
            let (c0, c1) = (cur[0], cur[1]);
            let (n0, n1) = (next[0], next[1]);
            if self.spans[n0].y != self.spans[c0].y + 1 {
                continue;
            }
            let (mut i, mut j) = (c0, n0);
            while i < c1 && j < n1 {
                let (s, t) = (self.spans[i], self.spans[j]);
                if s.x0 < t.x1 && t.x0 < s.x1 {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
                if s.x1 <= t.x1 {
                    i += 1;
                } else {
                    j += 1;
                }
            }
        }
        let mut groups: Vec<Vec<Span>> = Vec::new();
        let mut slot = vec![usize::MAX; n];
        for i in 0..n {
            let r = find(&mut parent, i);
            if slot[r] == usize::MAX {
                slot[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[r]].push(self.spans[i]);
        }
        groups.into_iter().map(|spans| PixelSet { spans }).collect()
    }

    /// Encodes the set with its tight bounding box. `None` when empty.
    pub fn to_mask(&self) -> Option<RunLengthMask> {
        let bbox = self.bbox()?;
        let w = bbox.w as u64;
        let total = bbox.pixel_count() as u64;
        let mut runs: Vec<u32> = Vec::new();
        let mut cursor = 0u64;
        for s in &self.spans {
            let start = (s.y - bbox.y0) as u64 * w + (s.x0 - bbox.x0) as u64;
            let len = (s.x1 - s.x0) as u64;
            if start == cursor && !runs.is_empty() {
                *runs.last_mut().expect("non-empty") += len as u32;
            } else {
                runs.push((start - cursor) as u32);
                runs.push(len as u32);
            }
            cursor = start + len;
        }
        if cursor < total {
            runs.push((total - cursor) as u32);
        }
        Some(RunLengthMask::from_parts(bbox, runs).expect("span encoding is canonical"))
    }
}

fn combine_row(y: i32, a: &[Span], b: &[Span], op: SetOp, out: &mut Vec<Span>) {
    let mut cuts: Vec<i32> = a.iter().chain(b).flat_map(|s| [s.x0, s.x1]).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let (mut i, mut j) = (0, 0);
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        while i < a.len() && a[i].x1 <= lo {
            i += 1;
        }
        while j < b.len() && b[j].x1 <= lo {
            j += 1;
        }
        let in_a = i < a.len() && a[i].x0 <= lo;
        let in_b = j < b.len() && b[j].x0 <= lo;
        if op.keep(in_a, in_b) {
            match out.last_mut() {
                Some(last) if last.y == y && last.x1 == lo => last.x1 = hi,
                _ => out.push(Span { y, x0: lo, x1: hi }),
            }
        }
    }
}
