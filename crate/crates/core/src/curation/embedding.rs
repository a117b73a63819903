use serde::{Deserialize, Serialize};

use crate::features::FeatureTable;
use crate::raster::{MaskRecord, TileGrid, TileId};
use crate::scalar::{normalize, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileEmbedding<T> {
    pub tile: TileId,
    pub vector: Vec<T>,
    /// False when the tile had no features and got the global mean.
    pub observed: bool,
}

/// Mean of the vectors, L2-normalized. `None` when there are none or they
/// cancel out.
pub fn tile_embedding<T: Scalar>(vectors: &[&[T]]) -> Option<Vec<T>> {
    let first = vectors.first()?;
    let mut acc = vec![T::zero(); first.len()];
    for v in vectors {
        acc.iter_mut().zip(v.iter()).for_each(|(a, &x)| *a = *a + x);
    }
    normalize(&mut acc).then_some(acc)
}

/// One embedding per tile of `grid`, in row-major order, pooled from the
/// features of the masks addressed to each tile. Tiles without features
/// take the mean over all masks.
pub fn tile_embeddings<T: Scalar>(
    masks: &[MaskRecord],
    features: &FeatureTable<T>,
    grid: &TileGrid,
) -> Result<Vec<TileEmbedding<T>>> {
    let mut per_tile: Vec<Vec<&[T]>> = vec![Vec::new(); grid.tile_count()];
    for r in masks {
        grid.check_tile(r.tile)?;
        let v = features.get(r.id).ok_or(Error::MissingFeature(r.id))?;
        per_tile[grid.index(r.tile)].push(v);
    }
    let all: Vec<&[T]> = per_tile.iter().flatten().copied().collect();
    let global = tile_embedding(&all)
        .ok_or_else(|| Error::InvalidArgument("no mask features to embed tiles with".into()))?;
    Ok(per_tile
        .iter()
        .enumerate()
        .map(|(i, vs)| {
            let pooled = tile_embedding(vs);
            TileEmbedding {
                tile: grid.tile_at(i),
                observed: pooled.is_some(),
                vector: pooled.unwrap_or_else(|| global.clone()),
            }
        })
        .collect())
}
