use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sample::stratified_sample;
use super::skater::RegionPartition;
use crate::raster::TileId;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileStatus {
    Drafted,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTile {
    pub tile: TileId,
    pub status: TileStatus,
}

/// Manifest of one curation round, stored as `round-NNN.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementRound {
    pub round: u32,
    pub seed: u64,
    pub n_per_region: usize,
    pub short_regions: Vec<usize>,
    pub tiles: Vec<RoundTile>,
}

/// All curation rounds under one directory.
#[derive(Debug, Clone)]
pub struct Curation {
    dir: PathBuf,
    rounds: Vec<RefinementRound>,
}

fn round_file(dir: &Path, round: u32) -> PathBuf {
    dir.join(format!("round-{round:03}.json"))
}

impl Curation {
    /// Loads every round manifest in `dir`, creating the directory if
    /// needed.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut rounds = Vec::new();
        let mut names: Vec<PathBuf> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        names.sort();
        for p in names {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("round-") && name.ends_with(".json") {
                let r: RefinementRound =
                    serde_json::from_str(&fs::read_to_string(&p)?).map_err(|e| {
                        Error::format("round manifest", format!("{}: {e}", p.display()))
                    })?;
                rounds.push(r);
            }
        }
        rounds.sort_by_key(|r| r.round);
        Ok(Self {
            dir: dir.to_path_buf(),
            rounds,
        })
    }

    pub fn rounds(&self) -> &[RefinementRound] {
        &self.rounds
    }

    pub fn round(&self, round: u32) -> Option<&RefinementRound> {
        self.rounds.iter().find(|r| r.round == round)
    }

    /// Tiles drawn in any round so far.
    pub fn sampled(&self) -> BTreeSet<TileId> {
        self.rounds
            .iter()
            .flat_map(|r| r.tiles.iter().map(|t| t.tile))
            .collect()
    }

    /// Draws the next round, excluding every previously sampled tile, and
    /// writes its manifest.
    pub fn start_round(
        &mut self,
        partition: &RegionPartition,
        n_per_region: usize,
        seed: u64,
    ) -> Result<&RefinementRound> {
        let round = self.rounds.last().map_or(1, |r| r.round + 1);
        let s = stratified_sample(partition, n_per_region, seed, &self.sampled());
        let r = RefinementRound {
            round,
            seed,
            n_per_region,
            short_regions: s.short_regions,
            tiles: s
                .tiles
                .into_iter()
                .map(|tile| RoundTile {
                    tile,
                    status: TileStatus::Drafted,
                })
                .collect(),
        };
        self.write(&r)?;
        self.rounds.push(r);
        Ok(self.rounds.last().expect("just pushed"))
    }

    pub fn mark_refined(&mut self, round: u32, tile: TileId) -> Result<()> {
        let r = self
            .rounds
            .iter_mut()
            .find(|r| r.round == round)
            .ok_or_else(|| Error::InvalidArgument(format!("no curation round {round}")))?;
        let t = r.tiles.iter_mut().find(|t| t.tile == tile).ok_or_else(|| {
            Error::InvalidArgument(format!("tile {tile:?} is not in round {round}"))
        })?;
        t.status = TileStatus::Refined;
        let r = r.clone();
        self.write(&r)
    }

    fn write(&self, r: &RefinementRound) -> Result<()> {
        fs::write(
            round_file(&self.dir, r.round),
            serde_json::to_string_pretty(r)?,
        )?;
        Ok(())
    }
}
