use serde::{Deserialize, Serialize};

use crate::raster::{TileGrid, TileId};
use crate::scalar::{squared_distance, Scalar};
use crate::{Error, Result};

/// Spatially contiguous groups of tiles. Regions are ordered by their
/// first tile in row-major order; tiles inside a region are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPartition {
    pub p: usize,
    pub regions: Vec<Vec<TileId>>,
    /// Within-region sum of squared deviations from region means.
    pub ssd: f64,
}

impl RegionPartition {
    /// Region index of every tile, row-major.
    pub fn assignment(&self, grid: &TileGrid) -> Vec<usize> {
        let mut out = vec![usize::MAX; grid.tile_count()];
        for (r, tiles) in self.regions.iter().enumerate() {
            for &t in tiles {
                out[grid.index(t)] = r;
            }
        }
        out
    }
}

/// Default region count: one region per 400 tiles, rounded up.
pub fn default_region_count(tiles: usize) -> usize {
    tiles.div_ceil(400).max(1)
}

/// Sum of squared deviations of the vectors from their mean.
pub fn ssd<T: Scalar>(vectors: &[&[T]]) -> f64 {
    let Some(first) = vectors.first() else {
        return 0.0;
    };
    let mut s = Stats::new(first.len());
    for v in vectors {
        s.add(v);
    }
    s.ssd()
}

#[derive(Clone)]
struct Stats {
    n: f64,
    sum: Vec<f64>,
    sum_sq: f64,
}

impl Stats {
    fn new(dim: usize) -> Self {
        Self {
            n: 0.0,
            sum: vec![0.0; dim],
            sum_sq: 0.0,
        }
    }

    fn add<T: Scalar>(&mut self, v: &[T]) {
        self.n += 1.0;
        for (s, &x) in self.sum.iter_mut().zip(v) {
            let x = x.to_f64_lossy();
            *s += x;
            self.sum_sq += x * x;
        }
    }

    fn merge(&mut self, o: &Stats) {
        self.n += o.n;
        self.sum.iter_mut().zip(&o.sum).for_each(|(a, b)| *a += b);
        self.sum_sq += o.sum_sq;
    }

    fn minus(&self, o: &Stats) -> Stats {
        Stats {
            n: self.n - o.n,
            sum: self.sum.iter().zip(&o.sum).map(|(a, b)| a - b).collect(),
            sum_sq: self.sum_sq - o.sum_sq,
        }
    }

    fn ssd(&self) -> f64 {
        if self.n == 0.0 {
            return 0.0;
        }
        (self.sum_sq - self.sum.iter().map(|s| s * s).sum::<f64>() / self.n).max(0.0)
    }
}

/// Regionalization by pruning a minimum spanning tree.
///
/// Tiles are linked to their rook neighbors with edge weight equal to the
/// squared Euclidean distance between embeddings; the MST is built with
/// Kruskal, ties broken by `(weight, u, v)`. `p - 1` cuts follow, each
/// removing the tree edge whose removal lowers the total within-region SSD
/// the most (ties go to the earlier edge).
pub fn skater_partition<T: Scalar>(
    grid: &TileGrid,
    embeddings: &[Vec<T>],
    p: usize,
) -> Result<RegionPartition> {
    let n = grid.tile_count();
    if embeddings.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} embeddings for {n} tiles",
            embeddings.len()
        )));
    }
    if p == 0 || p > n {
        return Err(Error::InvalidArgument(format!(
            "region count {p} outside [1, {n}]"
        )));
    }
    let dim = embeddings[0].len();
    if let Some(v) = embeddings.iter().find(|v| v.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            got: v.len(),
        });
    }

    let mut tree: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (u, v) in minimum_spanning_tree(grid, embeddings) {
        tree[u].push(v);
        tree[v].push(u);
    }
    for adj in &mut tree {
        adj.sort_unstable();
    }

    let mut region = vec![0usize; n];
    let mut n_regions = 1;
    for _ in 1..p {
        let Some((_, u, v)) = best_cut(&tree, &region, n_regions, embeddings) else {
            break;
        };
        tree[u].retain(|&x| x != v);
        tree[v].retain(|&x| x != u);
        // relabel the side holding v
        let old = region[v];
        let mut stack = vec![v];
        region[v] = n_regions;
        while let Some(x) = stack.pop() {
            for &y in &tree[x] {
                if region[y] == old {
                    region[y] = n_regions;
                    stack.push(y);
                }
            }
        }
        n_regions += 1;
    }

    // canonical order: by smallest tile index
    let mut first = vec![usize::MAX; n_regions];
    for (i, &r) in region.iter().enumerate() {
        first[r] = first[r].min(i);
    }
    let mut order: Vec<usize> = (0..n_regions).collect();
    order.sort_by_key(|&r| first[r]);
    let mut regions: Vec<Vec<TileId>> = vec![Vec::new(); n_regions];
    let mut rank = vec![0; n_regions];
    for (k, &r) in order.iter().enumerate() {
        rank[r] = k;
    }
    for (i, &r) in region.iter().enumerate() {
        regions[rank[r]].push(grid.tile_at(i));
    }
    let total = regions
        .iter()
        .map(|tiles| {
            let vs: Vec<&[T]> = tiles
                .iter()
                .map(|&t| embeddings[grid.index(t)].as_slice())
                .collect();
            ssd(&vs)
        })
        .sum();
    Ok(RegionPartition {
        p: n_regions,
        regions,
        ssd: total,
    })
}

fn minimum_spanning_tree<T: Scalar>(grid: &TileGrid, emb: &[Vec<T>]) -> Vec<(usize, usize)> {
    let mut edges: Vec<(T, usize, usize)> = Vec::new();
    for (r, c) in grid.tiles() {
        let u = grid.index((r, c));
        if c + 1 < grid.cols {
            let v = grid.index((r, c + 1));
            edges.push((squared_distance(&emb[u], &emb[v]), u, v));
        }
        if r + 1 < grid.rows {
            let v = grid.index((r + 1, c));
            edges.push((squared_distance(&emb[u], &emb[v]), u, v));
        }
    }
    edges.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a.1, a.2).cmp(&(b.1, b.2)))
    });
    let mut parent: Vec<usize> = (0..emb.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut out = Vec::with_capacity(emb.len().saturating_sub(1));
    for (_, u, v) in edges {
        let (a, b) = (find(&mut parent, u), find(&mut parent, v));
        if a != b {
            parent[a.max(b)] = a.min(b);
            out.push((u, v));
        }
    }
    out
}

/// Best tree edge to remove: `(ssd reduction, parent, child)`.
fn best_cut<T: Scalar>(
    tree: &[Vec<usize>],
    region: &[usize],
    n_regions: usize,
    emb: &[Vec<T>],
) -> Option<(f64, usize, usize)> {
    let n = tree.len();
    let dim = emb[0].len();
    let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
    let mut seen = vec![false; n_regions];
    for root in 0..n {
        if seen[region[root]] {
            continue;
        }
        seen[region[root]] = true;
        // iterative DFS order from the region's smallest tile
        let mut order = Vec::new();
        let mut parent = vec![usize::MAX; n];
        let mut stack = vec![root];
        parent[root] = root;
        while let Some(x) = stack.pop() {
            order.push(x);
            for &y in tree[x].iter().rev() {
                if parent[y] == usize::MAX {
                    parent[y] = x;
                    stack.push(y);
                }
            }
        }
        let mut sub: Vec<Option<Stats>> = vec![None; n];
        for &x in order.iter().rev() {
            let mut s = Stats::new(dim);
            s.add(&emb[x]);
            for &y in &tree[x] {
                if parent[y] == x {
                    s.merge(sub[y].as_ref().expect("child done"));
                }
            }
            sub[x] = Some(s);
        }
        let whole = sub[root].clone().expect("root");
        let base = whole.ssd();
        let mut cands: Vec<(usize, usize)> = order
            .iter()
            .filter(|&&x| x != root)
            .map(|&x| (parent[x].min(x), parent[x].max(x)))
            .collect();
        cands.sort_unstable();
        for (a, b) in cands {
            let child = if parent[b] == a { b } else { a };
            let s = sub[child].as_ref().expect("visited");
            let gain = base - s.ssd() - whole.minus(s).ssd();
            let better = match best {
                None => true,
                Some((g, edge, _, _)) => gain > g || (gain == g && (a, b) < edge),
            };
            if better {
                best = Some((gain, (a, b), parent[child], child));
            }
        }
    }
    best.map(|(g, _, u, v)| (g, u, v))
}
