//! End-to-end batch run over one scene.
//!
//! Stages run in order and write into a fixed run-directory layout:
//!
//! ```text
//! run/
//!   fused.jsonl            fuse      fused masks on the annotation grid
//!   fusion.json            fuse      overlap and fusion counts
//!   features.mcft          features  mask features
//!   clusters.jsonl         cluster   suggested clusters of both stages
//!   clusters.json          cluster   stage counts, residual ids, cost
//!   session/               session   labeling session and decision log
//!   sparse.png(.meta)      export    sparse labels from the decisions
//!   curation/              curate    partition, round 1 and tile drafts
//!   metrics.json           evaluate  prediction scores and class areas
//!   summary.json
//!   manifest.json          version, seed, config and file digests
//! ```
//!
//! A failing stage stops the run; outputs of earlier stages stay on disk and
//! the manifest records the failed stage.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotation::{
    cost_report, export_sparse, ClusterDecision, CostReport, SessionManifest, SessionStore,
};
use crate::clustering::{hierarchical_cluster, majority_vote_label, write_candidates};
use crate::config::EngineConfig;
use crate::curation::{
    default_region_count, draft_annotation, masks_in_tile, skater_partition, tile_embeddings,
    Curation,
};
use crate::digest::{sha256_file, sha256_hex};
use crate::features::{describe_masks, export_features, import_features, FeatureTable};
use crate::fusion::{
    anchor_to_grid, fuse_scales_report, resolve_overlap_report, to_mosaic_pixels, FusionReport,
    OverlapReport,
};
use crate::metrics::{area_report, evaluate_paths, ClassArea, EvaluationReport};
use crate::raster::{
    global_frame, read_label_png, read_mask_set, write_label_png, write_mask_set, LabelRaster,
    MaskRecord, TileGrid, TileId, IGNORE_ID,
};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const AUTO_ANNOTATOR: &str = "auto-gt";

/// Output of the fuse stage.
#[derive(Debug, Clone)]
pub struct FuseOutcome {
    pub overlap: OverlapReport,
    /// Fused masks in the mosaic frame plus dropped fragments.
    pub fusion: FusionReport,
    /// Fused masks anchored to the annotation grid.
    pub fused: Vec<MaskRecord>,
}

/// Fine masks on the overlapping grid and coarse masks on the
/// half-resolution grid, reconciled and fused onto the annotation grid.
pub fn fuse_inputs(
    fine: &[MaskRecord],
    coarse: &[MaskRecord],
    cfg: &EngineConfig,
) -> Result<FuseOutcome> {
    let fine_grid = cfg.fine_grid()?;
    let overlap = resolve_overlap_report(fine, &fine_grid, &cfg.consistency())?;
    let fine_px = to_mosaic_pixels(&overlap.kept, &fine_grid, 1)?;
    let coarse_px = to_mosaic_pixels(coarse, &cfg.coarse_grid()?, 2)?;
    let fusion = fuse_scales_report(&fine_px, &coarse_px, &cfg.fusion())?;
    let fused = anchor_to_grid(&fusion.masks, &cfg.annotation_grid()?);
    Ok(FuseOutcome {
        overlap,
        fusion,
        fused,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSummary {
    pub fine_in: usize,
    pub coarse_in: usize,
    pub fine_kept: usize,
    pub duplicates: usize,
    pub conflicts: usize,
    pub fused: usize,
    pub dropped_fragments: usize,
    pub dropped_px: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub stage1: usize,
    pub stage2: usize,
    pub clustered_masks: usize,
    pub residual: Vec<u64>,
    pub cost: Option<CostReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    #[serde(flatten)]
    pub evaluation: EvaluationReport,
    pub gt_areas: Vec<ClassArea>,
    /// Fraction of sparse-labeled pixels that agree with the ground truth.
    pub sparse_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub fusion: FusionSummary,
    pub clusters: ClusterSummary,
    pub decisions: usize,
    pub sparse_labeled_px: u64,
    pub curation_tiles: usize,
    pub regions: usize,
    pub metrics: Option<MetricsSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Input name to digest.
    pub inputs: BTreeMap<String, String>,
    /// Output path (relative to the run directory) to digest.
    pub outputs: BTreeMap<String, String>,
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
}

/// Files and directories a run owns; cleared before a new run so reruns
/// start from the same state.
const LAYOUT: &[&str] = &[
    "fused.jsonl",
    "fusion.json",
    "features.mcft",
    "clusters.jsonl",
    "clusters.json",
    "session",
    "sparse.png",
    "sparse.png.meta",
    "curation",
    "metrics.json",
    "summary.json",
    MANIFEST_FILE,
];

struct Run<'a> {
    cfg: &'a EngineConfig,
    dir: PathBuf,
    outputs: Vec<PathBuf>,
}

impl Run<'_> {
    fn out(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn write_json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<()> {
        let p = self.out(name);
        fs::write(p, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` is not set")))
}

fn relative_files(dir: &Path, p: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    if p.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(p)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            relative_files(dir, &e, out)?;
        }
    } else if p.exists() {
        let rel = p
            .strip_prefix(dir)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/");
        out.insert(rel, sha256_file(p)?);
    }
    Ok(())
}

/// Runs every stage for `cfg` and returns the summary. The run directory is
/// `cfg.run_dir`.
pub fn run_pipeline(cfg: &EngineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = required(&cfg.run_dir, "run_dir")?.to_path_buf();
    fs::create_dir_all(&dir)?;
    for name in LAYOUT {
        let p = dir.join(name);
        if p.is_dir() {
            fs::remove_dir_all(&p)?;
        } else if p.exists() {
            fs::remove_file(&p)?;
        }
    }
    let mut run = Run {
        cfg,
        dir,
        outputs: Vec::new(),
    };
    let mut stage: &'static str = "";
    let result = stages(&mut run, &mut stage);
    let failed = result.as_ref().err().map(|_| stage.to_string());
    write_manifest(&run, failed)?;
    result.map_err(|e| e.in_stage(stage))
}

fn write_manifest(run: &Run, failed_stage: Option<String>) -> Result<()> {
    let cfg = run.cfg;
    let mut inputs = BTreeMap::new();
    for (name, p) in [
        ("fine_masks", &cfg.fine_masks),
        ("coarse_masks", &cfg.coarse_masks),
        ("image", &cfg.image),
        ("features", &cfg.features),
        ("reference", &cfg.reference),
        ("ground_truth", &cfg.ground_truth),
        ("prediction", &cfg.prediction),
    ] {
        if let Some(p) = p.as_deref().filter(|p| p.exists()) {
            inputs.insert(name.to_string(), sha256_file(p)?);
        }
    }
    let mut outputs = BTreeMap::new();
    for p in &run.outputs {
        relative_files(&run.dir, p, &mut outputs)?;
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_sha256: sha256_hex(cfg.to_toml().as_bytes()),
        inputs,
        outputs,
        completed: failed_stage.is_none(),
        failed_stage,
    };
    fs::write(
        run.dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

fn stages(run: &mut Run, stage: &mut &'static str) -> Result<RunSummary> {
    let cfg = run.cfg;
    let schema = cfg.schema()?;
    let grid = cfg.annotation_grid()?;

    *stage = "fuse";
    log::info!("fuse: reading masks");
    let fine = read_mask_set(required(&cfg.fine_masks, "fine_masks")?)?;
    let coarse = match &cfg.coarse_masks {
        Some(p) => read_mask_set(p)?,
        None => Vec::new(),
    };
    let fused = fuse_inputs(&fine, &coarse, cfg)?;
    let fused_path = run.out("fused.jsonl");
    write_mask_set(&fused_path, &fused.fused)?;
    let fusion = FusionSummary {
        fine_in: fine.len(),
        coarse_in: coarse.len(),
        fine_kept: fused.overlap.kept.len(),
        duplicates: fused.overlap.duplicates.len(),
        conflicts: fused.overlap.conflicts.len(),
        fused: fused.fused.len(),
        dropped_fragments: fused.fusion.dropped.len(),
        dropped_px: fused.fusion.dropped_area(),
    };
    run.write_json("fusion.json", &fusion)?;
    log::info!(
        "fuse: {} fine + {} coarse -> {} fused masks",
        fine.len(),
        coarse.len(),
        fusion.fused
    );
    let masks = fused.fused;

    *stage = "features";
    let features_path = run.out("features.mcft");
    let features: FeatureTable<f32> = match &cfg.features {
        // Imported at the cluster stage, where a missing file is reported.
        Some(_) => FeatureTable::new(0),
        None => {
            let image = image::open(required(&cfg.image, "image")?)
                .map_err(|e| match e {
                    image::ImageError::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
                        Error::MissingFile(cfg.image.clone().unwrap_or_default())
                    }
                    e => e.into(),
                })?
                .into_rgb8();
            let t = describe_masks(&image, &masks, &grid)?;
            export_features(&t, &features_path)?;
            t
        }
    };

    *stage = "cluster";
    let features = match &cfg.features {
        Some(p) => {
            let t: FeatureTable<f32> = import_features(p)?;
            export_features(&t, &features_path)?;
            t
        }
        None => features,
    };
    let reference_path = cfg
        .reference
        .as_deref()
        .or(cfg.ground_truth.as_deref())
        .ok_or_else(|| Error::Config("`reference` is not set".into()))?;
    let (reference, _) = read_label_png(reference_path)?;
    check_size(&reference, &grid)?;
    let clusters = hierarchical_cluster(&masks, &features, &reference, &grid, &cfg.cluster())?;
    let suggested: Vec<_> = clusters.suggested().cloned().collect();
    write_candidates(&run.out("clusters.jsonl"), &suggested)?;
    let clustered_masks: usize = suggested.iter().map(|c| c.member_ids.len()).sum();
    let cluster_summary = ClusterSummary {
        stage1: clusters.stage1.len(),
        stage2: clusters.stage2.len(),
        clustered_masks,
        residual: clusters.residual.clone(),
        cost: cost_report(masks.len() as u64, suggested.len() as u64).ok(),
    };
    run.write_json("clusters.json", &cluster_summary)?;
    log::info!(
        "cluster: {} + {} suggested clusters, {} residual masks",
        cluster_summary.stage1,
        cluster_summary.stage2,
        cluster_summary.residual.len()
    );

    *stage = "session";
    let session_dir = run.out("session");
    let mut store = SessionStore::create(
        &session_dir,
        &SessionManifest {
            clusters: PathBuf::from("../clusters.jsonl"),
            masks: PathBuf::from("../fused.jsonl"),
            schema: cfg.schema.clone(),
            grid,
            pixel_size_m: cfg.pixel_size_m,
            image: cfg.image.clone(),
        },
    )?;
    let gt = match &cfg.ground_truth {
        Some(p) => {
            let (g, _) = read_label_png(p)?;
            check_size(&g, &grid)?;
            Some(g)
        }
        None => None,
    };
    let mut decisions = 0;
    if cfg.auto_label {
        let gt = gt
            .as_ref()
            .ok_or_else(|| Error::Config("auto_label needs `ground_truth`".into()))?;
        let ds = auto_decisions(&store, gt)?;
        decisions = ds.len();
        store.record_decisions(ds)?;
    }

    *stage = "export";
    let sparse = export_sparse(&store)?;
    write_label_png(&run.out("sparse.png"), &sparse, &cfg.schema)?;
    run.outputs.push(run.dir.join("sparse.png.meta"));
    let sparse_labeled_px = sparse.data().iter().filter(|&&v| v != IGNORE_ID).count() as u64;

    *stage = "curate";
    let curation_dir = run.out("curation");
    let emb = tile_embeddings(&masks, &features, &grid)?;
    let p = cfg
        .regions
        .unwrap_or_else(|| default_region_count(grid.tile_count()));
    let vectors: Vec<Vec<f32>> = emb.into_iter().map(|e| e.vector).collect();
    let partition = skater_partition(&grid, &vectors, p)?;
    fs::create_dir_all(&curation_dir)?;
    fs::write(
        curation_dir.join("partition.json"),
        serde_json::to_string_pretty(&partition)? + "\n",
    )?;
    let mut curation = Curation::open(&curation_dir)?;
    let round = curation
        .start_round(&partition, cfg.n_per_region, cfg.seed)?
        .clone();
    if let Some(pred_path) = &cfg.prediction {
        let (pred, _) = read_label_png(pred_path)?;
        let tiles: Vec<TileId> = round.tiles.iter().map(|t| t.tile).collect();
        write_drafts(
            &curation_dir.join("drafts"),
            &tiles,
            &pred,
            &masks,
            &grid,
            &cfg.schema,
        )?;
    }

    *stage = "evaluate";
    let metrics = match (&cfg.ground_truth, &cfg.prediction, &gt) {
        (Some(g), Some(p), Some(gt)) => {
            let evaluation = evaluate_paths(g, p, &schema)?;
            let agree = sparse
                .data()
                .iter()
                .zip(gt.data())
                .filter(|(s, g)| **s != IGNORE_ID && s == g)
                .count() as f64;
            let m = MetricsSummary {
                evaluation,
                gt_areas: area_report(gt, &schema)?,
                sparse_accuracy: (sparse_labeled_px > 0).then(|| agree / sparse_labeled_px as f64),
            };
            run.write_json("metrics.json", &m)?;
            Some(m)
        }
        _ => None,
    };

    let summary = RunSummary {
        fusion,
        clusters: cluster_summary,
        decisions,
        sparse_labeled_px,
        curation_tiles: round.tiles.len(),
        regions: partition.regions.len(),
        metrics,
    };
    run.write_json("summary.json", &summary)?;
    Ok(summary)
}

/// Writes one draft per tile as `r{row:03}_c{col:03}.png` under `dir`.
/// `prediction` covers the whole mosaic and `masks` are on `grid`.
pub fn write_drafts(
    dir: &Path,
    tiles: &[TileId],
    prediction: &LabelRaster,
    masks: &[MaskRecord],
    grid: &TileGrid,
    schema: &str,
) -> Result<Vec<PathBuf>> {
    check_size(prediction, grid)?;
    fs::create_dir_all(dir)?;
    let mut out = Vec::with_capacity(tiles.len());
    for &tile in tiles {
        let rect = grid.tile_rect(tile);
        let crop = prediction.crop(rect.x0, rect.y0, rect.w, rect.h);
        let local = masks_in_tile(masks, grid, tile)?;
        let draft = draft_annotation(&crop, &local);
        let path = dir.join(format!("r{:03}_c{:03}.png", tile.0, tile.1));
        write_label_png(&path, &draft, schema)?;
        out.push(path);
    }
    Ok(out)
}

pub fn check_size(r: &LabelRaster, grid: &TileGrid) -> Result<()> {
    let (w, h) = grid.mosaic_size();
    if (r.width(), r.height()) != (w, h) {
        return Err(Error::RasterSize {
            want_w: w,
            want_h: h,
            got_w: r.width(),
            got_h: r.height(),
        });
    }
    Ok(())
}

/// Labels every session cluster with the ground-truth majority class of its
/// members. Members whose own majority differs are excluded; clusters with
/// no labeled member are rejected.
pub fn auto_decisions(store: &SessionStore, gt: &LabelRaster) -> Result<Vec<ClusterDecision>> {
    let mut out = Vec::new();
    for c in store.clusters() {
        let mut votes: BTreeMap<u8, usize> = BTreeMap::new();
        let mut member_class = Vec::with_capacity(c.member_ids.len());
        for &id in &c.member_ids {
            let m = store.mask(id).ok_or(Error::UnknownMask(id))?;
            let px = global_frame(m, store.grid())?.to_pixels();
            let class = majority_vote_label(gt, &px);
            if class != IGNORE_ID {
                *votes.entry(class).or_default() += 1;
            }
            member_class.push((id, class));
        }
        let best = votes
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&k, _)| k);
        let d = match best {
            Some(class) => ClusterDecision::labeled(c.id, class).excluding(
                member_class
                    .iter()
                    .filter(|(_, k)| *k != class)
                    .map(|(id, _)| *id)
                    .collect::<Vec<u64>>(),
            ),
            None => ClusterDecision::rejected(c.id),
        };
        out.push(d.by(AUTO_ANNOTATOR, 0));
    }
    Ok(out)
}
