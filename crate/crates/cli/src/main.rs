mod args;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use mcae_core::annotation::{cost_report, export_sparse, SessionManifest, SessionStore};
use mcae_core::clustering::{hierarchical_cluster, read_candidates, write_candidates};
use mcae_core::config::EngineConfig;
use mcae_core::curation::{
    apply_refinement, default_region_count, skater_partition, tile_embeddings, Curation, Edit,
    RegionPartition,
};
use mcae_core::features::{describe_masks, export_features, import_features};
use mcae_core::metrics::evaluate_paths;
use mcae_core::pipeline::{check_size, fuse_inputs, run_pipeline, write_drafts};
use mcae_core::raster::{
    read_label_png, read_mask_set, write_label_png, write_mask_set, ClassSchema,
};
use mcae_core::synth::{generate_scene, SceneSpec};
use mcae_core::{Error, ErrorClass, FeatureTable, Result};

use args::{Cli, Command, CurateCommand};

const PARTITION_FILE: &str = "partition.json";

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Invariant => 4,
            })
        }
    }
}

fn config(cli: &Cli) -> Result<EngineConfig> {
    let mut c = match &cli.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    let g = &cli.grid;
    if let Some(v) = &g.schema {
        c.schema = v.clone();
    }
    if let Some(v) = g.tile_size {
        c.tile_size = v;
    }
    if let Some(v) = g.rows {
        c.rows = v;
    }
    if let Some(v) = g.cols {
        c.cols = v;
    }
    if let Some(v) = g.overlap {
        c.overlap_ratio = v;
    }
    if let Some(v) = cli.seed {
        c.seed = v;
    }
    Ok(c)
}

/// Prints to stdout; a closed pipe (`mcae ... | head`) is not an error.
fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(v)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn pick(flag: &Option<PathBuf>, fallback: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    flag.clone().or_else(|| fallback.clone()).ok_or_else(|| {
        Error::Config(format!(
            "--{key} is required (or set `{key}` in the config)"
        ))
    })
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p)?)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    let mut cfg = config(&cli)?;

    match cli.command {
        Command::Fuse { fine, coarse, out } => {
            cfg.validate()?;
            let fine = read_mask_set(&pick(&fine, &cfg.fine_masks, "fine")?)?;
            let coarse = match coarse.or(cfg.coarse_masks.clone()) {
                Some(p) => read_mask_set(&p)?,
                None => Vec::new(),
            };
            let f = fuse_inputs(&fine, &coarse, &cfg)?;
            write_mask_set(&out, &f.fused)?;
            print_json(&serde_json::json!({
                "fine_in": fine.len(),
                "coarse_in": coarse.len(),
                "duplicates": f.overlap.duplicates.len(),
                "conflicts": f.overlap.conflicts.len(),
                "fused": f.fused.len(),
                "dropped_fragments": f.fusion.dropped.len(),
                "dropped_px": f.fusion.dropped_area(),
            }))
        }
        Command::Features { images, masks, out } => {
            cfg.validate()?;
            let mut image_path = pick(&images, &cfg.image, "images")?;
            if image_path.is_dir() {
                image_path = image_path.join("mosaic.png");
            }
            if !image_path.exists() {
                return Err(Error::MissingFile(image_path));
            }
            let image = image::open(&image_path)?.into_rgb8();
            let masks = read_mask_set(&masks)?;
            let table = describe_masks(&image, &masks, &cfg.annotation_grid()?)?;
            export_features(&table, &out)?;
            print_json(&serde_json::json!({"masks": table.len(), "dim": table.dim()}))
        }
        Command::Cluster {
            masks,
            features,
            reference,
            out,
            eps,
            min_pts,
            purity,
        } => {
            if let Some(v) = eps {
                cfg.eps = v;
            }
            if let Some(v) = min_pts {
                cfg.min_pts = v;
            }
            if let Some(v) = purity {
                cfg.purity_threshold = v;
            }
            cfg.validate()?;
            let grid = cfg.annotation_grid()?;
            let masks = read_mask_set(&masks)?;
            let features: FeatureTable =
                import_features(&pick(&features, &cfg.features, "features")?)?;
            let reference = pick(
                &reference,
                &cfg.reference.clone().or(cfg.ground_truth.clone()),
                "reference",
            )?;
            let (reference, _) = read_label_png(&reference)?;
            check_size(&reference, &grid)?;
            let h = hierarchical_cluster(&masks, &features, &reference, &grid, &cfg.cluster())?;
            let suggested: Vec<_> = h.suggested().cloned().collect();
            write_candidates(&out, &suggested)?;
            print_json(&serde_json::json!({
                "stage1": h.stage1.len(),
                "stage2": h.stage2.len(),
                "clustered_masks": suggested.iter().map(|c| c.member_ids.len()).sum::<usize>(),
                "residual": h.residual.len(),
            }))
        }
        Command::Session {
            clusters,
            masks,
            image,
            out,
        } => {
            cfg.validate()?;
            // Validate inputs before creating anything.
            read_candidates(&clusters)?;
            let image = image
                .or(cfg.image.clone())
                .map(|p| absolute(&p))
                .transpose()?;
            let store = SessionStore::create(
                &out,
                &SessionManifest {
                    clusters: absolute(&clusters)?,
                    masks: absolute(&masks)?,
                    schema: cfg.schema.clone(),
                    grid: cfg.annotation_grid()?,
                    pixel_size_m: cfg.pixel_size_m,
                    image,
                },
            )?;
            print_json(&store.progress())
        }
        Command::Serve { session, addr, ui } => {
            let state = mcae_server::AppState::open(&session)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(mcae_server::serve(addr, state, ui))?;
            Ok(())
        }
        Command::Export { session, out } => {
            let store = SessionStore::open(&session)?;
            let raster = export_sparse(&store)?;
            write_label_png(&out, &raster, store.schema().name())?;
            Ok(())
        }
        Command::Stats { session } => {
            let store = SessionStore::open(&session)?;
            let p = store.progress();
            let cost = cost_report(p.masks_total as u64, p.clusters_total as u64).ok();
            print_json(&serde_json::json!({"progress": p, "cost": cost}))
        }
        Command::Curate { command } => curate(command, &cfg),
        Command::Evaluate { gt, pred, out } => {
            let schema = ClassSchema::by_name(&cfg.schema)?;
            let report = evaluate_paths(
                &pick(&gt, &cfg.ground_truth, "gt")?,
                &pick(&pred, &cfg.prediction, "pred")?,
                &schema,
            )?;
            match out {
                Some(p) => fs::write(p, serde_json::to_string_pretty(&report)? + "\n")?,
                None => print_json(&report)?,
            }
            Ok(())
        }
        Command::Synth { out } => {
            let d = SceneSpec::default();
            let spec = SceneSpec {
                seed: cli.seed.unwrap_or(d.seed),
                tile_size: cli.grid.tile_size.unwrap_or(d.tile_size),
                rows: cli.grid.rows.unwrap_or(d.rows),
                cols: cli.grid.cols.unwrap_or(d.cols),
                ..d
            };
            let scene = generate_scene(&spec).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::Config(m),
                e => e,
            })?;
            let path = scene.write(&out)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Run {
            run_dir,
            auto_label,
        } => {
            if cli.config.is_none() {
                return Err(Error::Config("`run` needs --config".into()));
            }
            if let Some(d) = run_dir {
                cfg.run_dir = Some(d);
            }
            cfg.auto_label |= auto_label;
            let summary = run_pipeline(&cfg)?;
            print_json(&summary)
        }
    }
}

fn curate(cmd: CurateCommand, cfg: &EngineConfig) -> Result<()> {
    cfg.validate()?;
    let grid = cfg.annotation_grid()?;
    match cmd {
        CurateCommand::Partition {
            features,
            masks,
            p,
            dir,
        } => {
            let features: FeatureTable = import_features(&features)?;
            let masks = read_mask_set(&masks)?;
            let emb = tile_embeddings(&masks, &features, &grid)?;
            let p = p
                .or(cfg.regions)
                .unwrap_or_else(|| default_region_count(grid.tile_count()));
            let vectors: Vec<Vec<f32>> = emb.into_iter().map(|e| e.vector).collect();
            let partition = skater_partition(&grid, &vectors, p)?;
            fs::create_dir_all(&dir)?;
            fs::write(
                dir.join(PARTITION_FILE),
                serde_json::to_string_pretty(&partition)? + "\n",
            )?;
            print_json(&serde_json::json!({"p": partition.p, "ssd": partition.ssd}))
        }
        CurateCommand::Sample { dir, round, n } => {
            let ppath = dir.join(PARTITION_FILE);
            let text = fs::read_to_string(&ppath).map_err(|_| Error::MissingFile(ppath.clone()))?;
            let partition: RegionPartition = serde_json::from_str(&text)
                .map_err(|e| Error::format("partition", e.to_string()))?;
            let mut c = Curation::open(&dir)?;
            let next = c.rounds().last().map_or(1, |r| r.round + 1);
            if let Some(r) = round {
                if r != next {
                    return Err(Error::Config(format!(
                        "round {r} requested but the next round is {next}"
                    )));
                }
            }
            let r = c.start_round(&partition, n.unwrap_or(cfg.n_per_region), cfg.seed)?;
            print_json(r)
        }
        CurateCommand::Draft {
            pred,
            masks,
            dir,
            round,
        } => {
            let c = Curation::open(&dir)?;
            let r = c
                .round(round)
                .ok_or_else(|| Error::InvalidArgument(format!("no curation round {round}")))?;
            let tiles: Vec<_> = r.tiles.iter().map(|t| t.tile).collect();
            let (pred, _) = read_label_png(&pred)?;
            let masks = read_mask_set(&masks)?;
            let written = write_drafts(
                &dir.join("drafts"),
                &tiles,
                &pred,
                &masks,
                &grid,
                &cfg.schema,
            )?;
            for p in written {
                println!("{}", p.display());
            }
            Ok(())
        }
        CurateCommand::Refine {
            draft,
            edits,
            out,
            dir,
            round,
            tile,
        } => {
            let (draft, meta) = read_label_png(&draft)?;
            let schema = ClassSchema::by_name(&meta.schema)?;
            let text = fs::read_to_string(&edits).map_err(|_| Error::MissingFile(edits.clone()))?;
            let edits: Vec<Edit> = serde_json::from_str(&text)
                .map_err(|e| Error::format("edit list", e.to_string()))?;
            let refined = apply_refinement(&draft, &edits, &schema)?;
            write_label_png(&out, &refined, schema.name())?;
            match (dir, round, tile) {
                (Some(dir), Some(round), Some(tile)) => {
                    Curation::open(&dir)?.mark_refined(round, tile)
                }
                (None, None, None) => Ok(()),
                _ => Err(Error::Config(
                    "--dir, --round and --tile go together".into(),
                )),
            }
        }
    }
}
