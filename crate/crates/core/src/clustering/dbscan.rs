use rayon::prelude::*;

use crate::scalar::{dot, Scalar};
use crate::{Error, Result};

/// Cluster assignment per input point. Points are reported in ascending id
/// order; `None` marks noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbscanLabels {
    pub assignments: Vec<(u64, Option<u32>)>,
    pub n_clusters: u32,
}

impl DbscanLabels {
    /// Member ids per cluster, in cluster-label order.
    pub fn clusters(&self) -> Vec<Vec<u64>> {
        let mut out = vec![Vec::new(); self.n_clusters as usize];
        for &(id, label) in &self.assignments {
            if let Some(l) = label {
                out[l as usize].push(id);
            }
        }
        out
    }

    pub fn noise(&self) -> Vec<u64> {
        self.assignments
            .iter()
            .filter(|(_, l)| l.is_none())
            .map(|&(id, _)| id)
            .collect()
    }
}

/// DBSCAN under cosine distance `1 - a·b` on unit vectors.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. Seeds are visited in ascending id order, so cluster labels
/// follow the smallest core id of each cluster and a border point reachable
/// from several clusters joins the one that reaches it first.
pub fn dbscan<T: Scalar>(points: &[(u64, &[T])], eps: T, min_pts: usize) -> Result<DbscanLabels> {
    let mut pts: Vec<(u64, &[T])> = points.to_vec();
    pts.sort_by_key(|p| p.0);
    if let Some(w) = pts.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DuplicateId(w[0].0));
    }
    if let Some(first) = pts.first() {
        let dim = first.1.len();
        if let Some(p) = pts.iter().find(|p| p.1.len() != dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                got: p.1.len(),
            });
        }
    }

    let neighbors = neighborhoods(&pts, eps);
    let core: Vec<bool> = neighbors.iter().map(|n| n.len() >= min_pts).collect();
    let mut label: Vec<Option<u32>> = vec![None; pts.len()];
    let mut n_clusters = 0u32;
    let mut queue = Vec::new();
    for seed in 0..pts.len() {
        if !core[seed] || label[seed].is_some() {
            continue;
        }
        let c = n_clusters;
        n_clusters += 1;
        label[seed] = Some(c);
        queue.clear();
        queue.push(seed);
        while let Some(p) = queue.pop() {
            for &q in &neighbors[p] {
                if label[q].is_none() {
                    label[q] = Some(c);
                    if core[q] {
                        queue.push(q);
                    }
                }
            }
        }
    }
    Ok(DbscanLabels {
        assignments: pts.iter().map(|p| p.0).zip(label).collect(),
        n_clusters,
    })
}

/// Neighbor lists (indices, ascending, self included).
///
/// Candidates are pruned on a sorted 1-D projection: for unit vectors,
/// `1 - a·b <= eps` implies `|a_k - b_k| <= sqrt(2 eps)` on any axis. The
/// bound is padded so float drift never prunes a true neighbor.
fn neighborhoods<T: Scalar>(pts: &[(u64, &[T])], eps: T) -> Vec<Vec<usize>> {
    let n = pts.len();
    if n == 0 {
        return Vec::new();
    }
    let axis = widest_axis(pts);
    let proj: Vec<f64> = pts.iter().map(|p| p.1[axis].to_f64_lossy()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
    let mut rank = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let reach = (2.0 * eps.to_f64_lossy() + 1e-3).sqrt();
    let within = |i: usize, j: usize| T::one() - dot(pts[i].1, pts[j].1) <= eps;

    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            let r = rank[i];
            for &j in order[..r].iter().rev() {
                if proj[i] - proj[j] > reach {
                    break;
                }
                if within(i, j) {
                    out.push(j);
                }
            }
            out.push(i);
            for &j in &order[r + 1..] {
                if proj[j] - proj[i] > reach {
                    break;
                }
                if within(i, j) {
                    out.push(j);
                }
            }
            out.sort_unstable();
            out
        })
        .collect()
}

fn widest_axis<T: Scalar>(pts: &[(u64, &[T])]) -> usize {
    let dim = pts[0].1.len();
    (0..dim)
        .map(|k| {
            let (lo, hi) = pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| {
                let v = p.1[k].to_f64_lossy();
                (lo.min(v), hi.max(v))
            });
            (k, hi - lo)
        })
        .fold(
            (0, f64::MIN),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        )
        .0
}
