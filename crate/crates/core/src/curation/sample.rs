use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::skater::RegionPartition;
use crate::raster::TileId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    /// Sampled tiles in row-major order.
    pub tiles: Vec<TileId>,
    /// Regions that had fewer available tiles than requested.
    pub short_regions: Vec<usize>,
}

/// Region-wise uniform sampling without replacement.
///
/// Region `i` draws from a ChaCha8 generator seeded with `seed` on stream
/// `i`, so adding or removing regions never changes the draws of the
/// others. Tiles in `exclude` are never drawn.
pub fn stratified_sample(
    partition: &RegionPartition,
    n_per_region: usize,
    seed: u64,
    exclude: &BTreeSet<TileId>,
) -> Sample {
    let mut tiles = Vec::new();
    let mut short_regions = Vec::new();
    for (i, region) in partition.regions.iter().enumerate() {
        let mut available: Vec<TileId> = region
            .iter()
            .copied()
            .filter(|t| !exclude.contains(t))
            .collect();
        available.sort_unstable();
        if available.len() < n_per_region {
            short_regions.push(i);
        }
        let k = n_per_region.min(available.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        tiles.extend(
            rand::seq::index::sample(&mut rng, available.len(), k)
                .into_iter()
                .map(|j| available[j]),
        );
    }
    tiles.sort_unstable();
    Sample {
        tiles,
        short_regions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn partition() -> RegionPartition {
        let a: Vec<TileId> = (0..6).flat_map(|r| (0..3).map(move |c| (r, c))).collect();
        let b: Vec<TileId> = (0..6).flat_map(|r| (3..6).map(move |c| (r, c))).collect();
        RegionPartition {
            p: 2,
            regions: vec![a, b],
            ssd: 0.0,
        }
    }

    #[test]
    fn zero_per_region_is_empty() {
        let s = stratified_sample(&partition(), 0, 1, &BTreeSet::new());
        assert!(s.tiles.is_empty() && s.short_regions.is_empty());
    }

    #[test]
    fn deterministic_and_per_region() {
        let p = partition();
        let a = stratified_sample(&p, 4, 99, &BTreeSet::new());
        let b = stratified_sample(&p, 4, 99, &BTreeSet::new());
        assert_eq!(a, b);
        assert_eq!(a.tiles.len(), 8);
        assert_eq!(a.tiles.iter().filter(|t| t.1 < 3).count(), 4);
        let mut sorted = a.tiles.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, a.tiles);
        assert_ne!(a, stratified_sample(&p, 4, 100, &BTreeSet::new()));
    }

    #[test]
    fn later_rounds_are_disjoint() {
        let p = partition();
        for seed in 0..100 {
            let r1 = stratified_sample(&p, 5, seed, &BTreeSet::new());
            let ex: BTreeSet<TileId> = r1.tiles.iter().copied().collect();
            let r2 = stratified_sample(&p, 5, seed + 1000, &ex);
            assert_eq!(r2.tiles.len(), 10);
            assert!(r2.tiles.iter().all(|t| !ex.contains(t)), "seed {seed}");
        }
    }

    #[test]
    fn short_regions_flagged() {
        let p = partition();
        let ex: BTreeSet<TileId> = p.regions[0][..16].iter().copied().collect();
        let s = stratified_sample(&p, 3, 7, &ex);
        assert_eq!(s.short_regions, vec![0]);
        assert_eq!(s.tiles.len(), 5);
    }
}
