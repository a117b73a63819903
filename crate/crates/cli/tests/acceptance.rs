//! Acceptance suite. Prints one PASS/FAIL line per criterion with the
//! tolerance and runtime limit it was held to; exits non-zero on any FAIL.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mcae_core::annotation::cost_report;
use mcae_core::clustering::{dbscan, hierarchical_cluster};
use mcae_core::curation::skater_partition;
use mcae_core::digest::sha256_hex;
use mcae_core::features::{
    crop_consistency_score, describe_masks, ConsistencyLossConfig, FeatureMap,
};
use mcae_core::fusion::{
    fuse_scales_report, resolve_overlap_report, ConsistencyConfig, FusionConfig,
};
use mcae_core::metrics::{metrics, ConfusionMatrix};
use mcae_core::pipeline::fuse_inputs;
use mcae_core::raster::{
    BBox, LabelRaster, MaskRecord, PixelSet, RunLengthMask, Scale, TileGrid, IGNORE_ID,
};
use mcae_core::synth::{generate_scene, Role, SceneSpec};

type Px = HashSet<(i32, i32)>;
type Outcome = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Outcome);
type Cell<'a> = ((i32, i32), &'a [(u32, u32)]);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if let false = $cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("cost-accounting", 1, cost_accounting),
        ("fusion-suite", 5, fusion_suite),
        ("overlap-consistency", 5, overlap_consistency),
        ("dbscan-oracle", 10, dbscan_oracle),
        ("hierarchical-coverage", 10, hierarchical_coverage),
        ("skater", 10, skater),
        ("metrics-oracle", 5, metrics_oracle),
        ("end-to-end-determinism", 60, end_to_end),
        ("consistency-loss-closed-forms", 5, loss_closed_forms),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(m) if took > Duration::from_secs(limit) => Err(format!("{m}; over time limit")),
            o => o,
        };
        let (tag, msg) = match &outcome {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        println!(
            "{tag} {name:<30} {:>7.3}s / {limit}s  {msg}",
            took.as_secs_f64()
        );
        failed += usize::from(outcome.is_err());
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn rect(x0: i32, y0: i32, w: u32, h: u32) -> Px {
    let mut s = Px::new();
    for y in y0..y0 + h as i32 {
        for x in x0..x0 + w as i32 {
            s.insert((x, y));
        }
    }
    s
}

/// Pixels of a mask decoded from its bitmap, shifted by `(dx, dy)`.
fn decoded(m: &RunLengthMask, dx: i32, dy: i32) -> Px {
    let b = m.bbox();
    m.decode()
        .iter()
        .enumerate()
        .filter(|(_, &on)| on)
        .map(|(i, _)| {
            let (x, y) = (i as i32 % b.w as i32, i as i32 / b.w as i32);
            (b.x0 + x + dx, b.y0 + y + dy)
        })
        .collect()
}

fn record(id: u64, tile: (u32, u32), scale: Scale, px: &Px) -> MaskRecord {
    MaskRecord {
        id,
        tile,
        scale,
        mask: PixelSet::from_pixels(px.iter().copied())
            .to_mask()
            .expect("non-empty"),
    }
}

fn cost_accounting() -> Outcome {
    let total = cost_report(539_512, 8_057).map_err(|e| e.to_string())?;
    let avg = total.avg_masks_per_cluster;
    ensure!(
        (avg - 67.0).abs() <= 0.05,
        "avg {avg} not within 0.05 of 67.0"
    );
    ensure!(
        (avg - 66.96).abs() <= 0.005,
        "avg {avg} does not round to 66.96"
    );
    let ratio = total.mcae_to_mask_ratio();
    ensure!(
        (ratio - 8_057.0 / 539_512.0).abs() <= 1e-15,
        "ratio {ratio} != n_clusters / n_masks"
    );
    ensure!(
        (ratio * 67.0 - 1.0).abs() <= 1e-3,
        "ratio {ratio} not about 1/67"
    );
    ensure!(
        total.pixel_cost == 4 * 539_512 && total.mask_cost == 539_512 && total.mcae_cost == 8_057,
        "cost fields {total:?}"
    );
    let district = cost_report(85_646, 936).map_err(|e| e.to_string())?;
    let p = district.avg_masks_per_cluster;
    ensure!(
        (p - 91.5).abs() <= 0.05,
        "district avg {p} not within 0.05 of 91.5"
    );
    Ok(format!(
        "avg {avg:.4} (|d| <= 0.05 of 67.0), ratio 1/{:.2}, district {p:.4} (|d| <= 0.05 of 91.5)",
        1.0 / ratio
    ))
}

/// Random shape: union of one or two rectangles inside `area`.
fn shape(rng: &mut ChaCha8Rng, area: (i32, i32, i32, i32), max: i32) -> Px {
    let (x0, y0, x1, y1) = area;
    let mut s = Px::new();
    for _ in 0..rng.random_range(1..=2) {
        let w = rng.random_range(1..=max.min(x1 - x0));
        let h = rng.random_range(1..=max.min(y1 - y0));
        let x = rng.random_range(x0..=x1 - w);
        let y = rng.random_range(y0..=y1 - h);
        s.extend(rect(x, y, w as u32, h as u32));
    }
    s
}

fn fusion_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF05E);
    let cfg = FusionConfig::default();
    let floor = u64::from(cfg.min_fragment_px);
    let mut kinds = [0usize; 3];
    let (mut outputs, mut dropped) = (0usize, 0usize);
    let mut fuse_time = Duration::ZERO;
    for case in 0..200 {
        let kind = case % 3;
        kinds[kind] += 1;
        let n_coarse = rng.random_range(1..=3);
        let coarse: Vec<Px> = (0..n_coarse)
            .map(|_| shape(&mut rng, (10, 10, 70, 70), 40))
            .collect();
        let n_fine = rng.random_range(1..=5);
        let mut fine = Vec::new();
        for _ in 0..n_fine {
            let c = &coarse[rng.random_range(0..coarse.len())];
            let cx0 = c.iter().map(|p| p.0).min().unwrap();
            let cy0 = c.iter().map(|p| p.1).min().unwrap();
            let cx1 = c.iter().map(|p| p.0).max().unwrap() + 1;
            let cy1 = c.iter().map(|p| p.1).max().unwrap() + 1;
            let s = match kind {
                // nested: inside the coarse mask's bounding box
                0 => shape(&mut rng, (cx0, cy0, cx1, cy1), 16),
                // partial: straddling its right edge
                1 => shape(&mut rng, (cx1 - 8, cy0, cx1 + 8, cy1), 16),
                // disjoint: in a band right of every coarse mask
                _ => shape(&mut rng, (80, 0, 100, 80), 16),
            };
            fine.push(s);
        }
        let fine_recs: Vec<MaskRecord> = fine
            .iter()
            .enumerate()
            .map(|(i, p)| record(i as u64 + 1, (0, 0), Scale::Fine, p))
            .collect();
        let coarse_recs: Vec<MaskRecord> = coarse
            .iter()
            .enumerate()
            .map(|(i, p)| record(100 + i as u64, (0, 0), Scale::Coarse, p))
            .collect();
        let t0 = Instant::now();
        let report =
            fuse_scales_report(&fine_recs, &coarse_recs, &cfg).map_err(|e| e.to_string())?;
        fuse_time += t0.elapsed();

        // Dense oracle over the 100 x 80 frame: bit 0 = any input, bit 1 = fine.
        const W: i32 = 100;
        let at = |(x, y): (i32, i32)| (y * W + x) as usize;
        let mut input = vec![0u8; (W * 80) as usize];
        for p in coarse.iter().flatten() {
            input[at(*p)] |= 1;
        }
        for p in fine.iter().flatten() {
            input[at(*p)] |= 3;
        }
        let mut covered = vec![false; input.len()];
        let mut cover = |p: (i32, i32)| -> bool {
            let i = at(p);
            !std::mem::replace(&mut covered[i], true)
        };
        for m in &report.masks {
            ensure!(
                m.scale == Scale::Fused,
                "case {case}: output scale {:?}",
                m.scale
            );
            let px = decoded(&m.mask, 0, 0);
            ensure!(!px.is_empty(), "case {case}: empty output");
            let inside_fine = px.iter().filter(|&&p| input[at(p)] & 2 != 0).count();
            ensure!(
                inside_fine == 0 || inside_fine == px.len(),
                "case {case}: output {} mixes fine and coarse-only pixels",
                m.id
            );
            for p in px {
                ensure!(
                    input[at(p)] != 0,
                    "case {case}: output pixel {p:?} outside every input"
                );
                ensure!(cover(p), "case {case}: pixel {p:?} in two outputs");
            }
        }
        for d in &report.dropped {
            ensure!(
                d.area() < floor,
                "case {case}: dropped fragment of {} px",
                d.area()
            );
            for p in d.pixels() {
                ensure!(
                    input[at(p)] != 0,
                    "case {case}: dropped pixel {p:?} outside every input"
                );
                ensure!(
                    cover(p),
                    "case {case}: dropped pixel {p:?} also covered elsewhere"
                );
            }
        }
        let missed = input
            .iter()
            .zip(&covered)
            .filter(|(&i, &c)| i != 0 && !c)
            .count();
        ensure!(
            missed == 0,
            "case {case}: {missed} input pixels neither fused nor dropped"
        );
        outputs += report.masks.len();
        dropped += report.dropped.len();
    }
    Ok(format!(
        "200 cases (nested {}, partial {}, disjoint {}), {outputs} outputs, {dropped} dropped fragments < {floor} px, exact partition; fusion {:.2}s",
        kinds[0], kinds[1], kinds[2], fuse_time.as_secs_f64()
    ))
}

fn overlap_consistency() -> Outcome {
    // 3x3 fine tiles of 64 px at 50% overlap; stride 32.
    let grid = TileGrid::new(64, 3, 3, 0.5).map_err(|e| e.to_string())?;
    let cfg = ConsistencyConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0C0A);
    let (mut n_dup, mut n_conf, mut n_pass) = (0, 0, 0);
    for trial in 0..50 {
        let mut recs = Vec::new();
        let mut next = 1u64;
        let mut emit = |recs: &mut Vec<MaskRecord>, tile: (u32, u32), px: &Px| {
            let (ox, oy) = grid.origin(tile);
            let local: Px = px.iter().map(|&(x, y)| (x - ox, y - oy)).collect();
            recs.push(record(next, tile, Scale::Fine, &local));
            next += 1;
            next - 1
        };
        let mut object = |cell: (i32, i32), even: bool| {
            let mut w = rng.random_range(6..=26);
            if even {
                w &= !1;
            }
            let h = rng.random_range(6..=26);
            let x = cell.0 + rng.random_range(0..=30 - w);
            let y = cell.1 + rng.random_range(0..=30 - h);
            (x, y, w as u32, h as u32)
        };

        // Cells seen by exactly one tile.
        let pass_cells = [
            ((0, 0), (0, 0)),
            ((97, 0), (0, 2)),
            ((0, 97), (2, 0)),
            ((97, 97), (2, 2)),
        ];
        let mut pass = Vec::new();
        for (cell, tile) in pass_cells {
            let (x, y, w, h) = object(cell, false);
            let px = rect(x, y, w, h);
            let id = emit(&mut recs, tile, &px);
            pass.push((id, px));
        }
        // Cells seen by two or four tiles; identical copies everywhere.
        let dup_cells: [Cell; 3] = [
            ((33, 33), &[(0, 0), (0, 1), (1, 0), (1, 1)]),
            ((65, 65), &[(1, 1), (1, 2), (2, 1), (2, 2)]),
            ((1, 33), &[(0, 0), (1, 0)]),
        ];
        let mut dups = Vec::new();
        for (cell, tiles) in dup_cells {
            let (x, y, w, h) = object(cell, false);
            let px = rect(x, y, w, h);
            let ids: Vec<u64> = tiles.iter().map(|&t| emit(&mut recs, t, &px)).collect();
            dups.push((ids, px));
        }
        // Cells seen by two tiles; the second copy keeps only the left half.
        let conf_cells = [((33, 1), [(0, 0), (0, 1)]), ((65, 97), [(2, 1), (2, 2)])];
        let mut conflicts = Vec::new();
        for (cell, [a, b]) in conf_cells {
            let (x, y, w, h) = object(cell, true);
            let full = rect(x, y, w, h);
            let half = rect(x, y, w / 2, h);
            let inter = full.intersection(&half).count() as f64;
            let iou = inter / full.union(&half).count() as f64;
            ensure!(
                (iou - 0.5).abs() < 1e-12,
                "trial {trial}: planted IoU {iou}"
            );
            conflicts.push(emit(&mut recs, a, &full));
            conflicts.push(emit(&mut recs, b, &half));
        }
        recs.shuffle(&mut rng);

        let report = resolve_overlap_report(&recs, &grid, &cfg).map_err(|e| e.to_string())?;
        let kept: BTreeMap<u64, &MaskRecord> = report.kept.iter().map(|r| (r.id, r)).collect();
        for (id, px) in &pass {
            let original = recs.iter().find(|r| r.id == *id).unwrap();
            ensure!(
                kept.get(id) == Some(&original),
                "trial {trial}: pass-through {id} altered or lost"
            );
            let (ox, oy) = grid.origin(original.tile);
            ensure!(
                decoded(&original.mask, ox, oy) == *px,
                "trial {trial}: pass-through pixels"
            );
        }
        for (ids, px) in &dups {
            let survivors: Vec<u64> = ids
                .iter()
                .copied()
                .filter(|i| kept.contains_key(i))
                .collect();
            ensure!(
                survivors.len() == 1,
                "trial {trial}: duplicate group {ids:?} kept {survivors:?}"
            );
            ensure!(
                survivors[0] == ids[0],
                "trial {trial}: tie should keep the smallest id"
            );
            let r = kept[&survivors[0]];
            let (ox, oy) = grid.origin(r.tile);
            ensure!(
                decoded(&r.mask, ox, oy) == *px,
                "trial {trial}: survivor pixels differ"
            );
            for i in &ids[1..] {
                ensure!(
                    report.duplicates.contains(i),
                    "trial {trial}: {i} not reported as duplicate"
                );
            }
        }
        for id in &conflicts {
            ensure!(!kept.contains_key(id), "trial {trial}: conflict {id} kept");
            ensure!(
                report.conflicts.contains(id),
                "trial {trial}: conflict {id} not reported"
            );
        }
        ensure!(
            report.kept.len() == pass.len() + dups.len(),
            "trial {trial}: {} kept, expected {}",
            report.kept.len(),
            pass.len() + dups.len()
        );
        let again = resolve_overlap_report(&report.kept, &grid, &cfg).map_err(|e| e.to_string())?;
        ensure!(again.kept == report.kept, "trial {trial}: not idempotent");
        ensure!(
            again.duplicates.is_empty() && again.conflicts.is_empty(),
            "trial {trial}: second pass dropped masks"
        );
        n_dup += dups.len();
        n_conf += conflicts.len();
        n_pass += pass.len();
    }
    Ok(format!(
        "50 trials: {n_dup} duplicate groups kept once, {n_conf} conflict copies discarded, {n_pass} pass-through intact, idempotent"
    ))
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Textbook DBSCAN over points visited in ascending id order.
fn reference_dbscan(points: &[(u64, Vec<f64>)], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by_key(|&i| points[i].0);
    let cos_dist = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        1.0 - dot / (na * nb)
    };
    let region = |i: usize| -> Vec<usize> {
        order
            .iter()
            .copied()
            .filter(|&j| cos_dist(&points[i].1, &points[j].1) <= eps)
            .collect()
    };
    #[derive(Clone, Copy, PartialEq)]
    enum L {
        Unvisited,
        Noise,
        In(usize),
    }
    let mut label = vec![L::Unvisited; points.len()];
    let mut c = 0;
    for &i in &order {
        if label[i] != L::Unvisited {
            continue;
        }
        let n = region(i);
        if n.len() < min_pts {
            label[i] = L::Noise;
            continue;
        }
        label[i] = L::In(c);
        let mut seeds: VecDeque<usize> = n.into_iter().filter(|&j| j != i).collect();
        while let Some(q) = seeds.pop_front() {
            match label[q] {
                L::Noise => label[q] = L::In(c),
                L::Unvisited => {
                    label[q] = L::In(c);
                    let nq = region(q);
                    if nq.len() >= min_pts {
                        seeds.extend(nq);
                    }
                }
                L::In(_) => {}
            }
        }
        c += 1;
    }
    label
        .into_iter()
        .map(|l| match l {
            L::In(c) => Some(c),
            _ => None,
        })
        .collect()
}

fn dbscan_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xDB5C);
    let (mut total_clusters, mut total_noise) = (0, 0);
    for inst in 0..100 {
        let n = rng.random_range(1..=200);
        let dim = rng.random_range(2..=6);
        let centers: Vec<Vec<f64>> = (0..rng.random_range(1..=5))
            .map(|_| unit((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let spread = rng.random_range(0.02..0.4);
        let mut ids = BTreeSet::new();
        while ids.len() < n {
            ids.insert(rng.random_range(0..10_000u64));
        }
        let mut ids: Vec<u64> = ids.into_iter().collect();
        ids.shuffle(&mut rng);
        let points: Vec<(u64, Vec<f64>)> = ids
            .into_iter()
            .map(|id| {
                let c = &centers[rng.random_range(0..centers.len())];
                let v = c
                    .iter()
                    .map(|x| x + rng.random_range(-spread..spread))
                    .collect();
                (id, unit(v))
            })
            .collect();
        let eps = rng.random_range(0.005..0.15);
        let min_pts = rng.random_range(2..=8);

        let input: Vec<(u64, &[f64])> = points.iter().map(|(id, v)| (*id, v.as_slice())).collect();
        let got = dbscan(&input, eps, min_pts).map_err(|e| e.to_string())?;
        let want = reference_dbscan(&points, eps, min_pts);

        let mut want_groups: BTreeMap<usize, BTreeSet<u64>> = BTreeMap::new();
        let mut want_noise = BTreeSet::new();
        for (p, l) in points.iter().zip(&want) {
            match l {
                Some(c) => {
                    want_groups.entry(*c).or_default().insert(p.0);
                }
                None => {
                    want_noise.insert(p.0);
                }
            }
        }
        let want_set: BTreeSet<BTreeSet<u64>> = want_groups.into_values().collect();
        let got_set: BTreeSet<BTreeSet<u64>> = got
            .clusters()
            .into_iter()
            .map(|c| c.into_iter().collect())
            .collect();
        let got_noise: BTreeSet<u64> = got.noise().into_iter().collect();
        ensure!(
            got_set == want_set && got_noise == want_noise,
            "instance {inst} (n {n}, eps {eps:.4}, min_pts {min_pts}): partitions differ"
        );
        total_clusters += want_set.len();
        total_noise += want_noise.len();
    }
    Ok(format!(
        "100 instances (n <= 200): identical up to relabeling; {total_clusters} clusters, {total_noise} noise points"
    ))
}

/// Most frequent non-ignore class under the pixels, ties to the smaller id.
fn majority(reference: &LabelRaster, px: &Px) -> u8 {
    let mut counts = [0usize; 256];
    for &(x, y) in px {
        if x >= 0 && y >= 0 && (x as u32) < reference.width() && (y as u32) < reference.height() {
            counts[reference.get(x as u32, y as u32) as usize] += 1;
        }
    }
    counts[IGNORE_ID as usize] = 0;
    let best = *counts.iter().max().unwrap();
    if best == 0 {
        return IGNORE_ID;
    }
    counts.iter().position(|&c| c == best).unwrap() as u8
}

fn hierarchical_coverage() -> Outcome {
    let mut notes = Vec::new();
    for seed in [0u64, 1, 2] {
        let scene = generate_scene(&SceneSpec {
            seed,
            ..SceneSpec::default()
        })
        .map_err(|e| e.to_string())?;
        let cfg = &scene.config;
        let grid = cfg.annotation_grid().map_err(|e| e.to_string())?;
        let masks = fuse_inputs(&scene.fine, &scene.coarse, cfg)
            .map_err(|e| e.to_string())?
            .fused;
        let handcrafted = describe_masks(&scene.image, &masks, &grid).map_err(|e| e.to_string())?;
        for (source, features) in [("planted", &scene.features), ("handcrafted", &handcrafted)] {
            let h =
                hierarchical_cluster(&masks, features, &scene.ground_truth, &grid, &cfg.cluster())
                    .map_err(|e| e.to_string())?;
            let tag = format!("seed {seed} {source}");

            let mut seen = BTreeSet::new();
            for c in h.suggested() {
                for &id in &c.member_ids {
                    ensure!(seen.insert(id), "{tag}: mask {id} in two clusters");
                }
            }
            for &id in &h.residual {
                ensure!(seen.insert(id), "{tag}: residual mask {id} also clustered");
            }
            let all: BTreeSet<u64> = masks.iter().map(|m| m.id).collect();
            ensure!(
                seen == all,
                "{tag}: stage1 + stage2 + residual does not cover every mask"
            );

            let pixels: BTreeMap<u64, Px> = masks
                .iter()
                .map(|m| {
                    let (ox, oy) = grid.origin(m.tile);
                    (m.id, decoded(&m.mask, ox, oy))
                })
                .collect();
            for c in h.suggested() {
                let pure = c
                    .member_ids
                    .iter()
                    .all(|id| majority(&scene.ground_truth, &pixels[id]) == c.dominant_class);
                ensure!(
                    pure && c.purity == 1.0,
                    "{tag}: cluster {} purity {}",
                    c.id,
                    c.purity
                );
            }

            let stage2: BTreeSet<u64> = h
                .stage2
                .iter()
                .flat_map(|c| c.member_ids.iter().copied())
                .collect();
            let mut ponds = 0;
            for obj in scene.objects_with(Role::Pond) {
                let px = decoded(&obj.mask, 0, 0);
                let ids: Vec<u64> = pixels
                    .iter()
                    .filter(|(_, p)| **p == px)
                    .map(|(id, _)| *id)
                    .collect();
                ensure!(
                    ids.len() == 1,
                    "{tag}: pond {} maps to fused masks {ids:?}",
                    obj.id
                );
                ensure!(
                    stage2.contains(&ids[0]),
                    "{tag}: pond {} (mask {}) not in stage 2",
                    obj.id,
                    ids[0]
                );
                ponds += 1;
            }
            ensure!(ponds > 0, "{tag}: no ponds planted");
            notes.push(format!(
                "{tag}: {}+{} clusters, {} residual, {ponds} ponds in stage 2",
                h.stage1.len(),
                h.stage2.len(),
                h.residual.len()
            ));
        }
    }
    Ok(format!("exact partition, purity 1.0; {}", notes[0]))
}

/// 4-connectivity of a set of cells on a 4x4 grid, as a row-major bitmask.
fn connected(set: u32) -> bool {
    const NOT_COL0: u32 = 0xEEEE;
    const NOT_COL3: u32 = 0x7777;
    if set == 0 {
        return false;
    }
    let mut reach = set & set.wrapping_neg();
    loop {
        let grown = set
            & (reach | reach << 4 | reach >> 4 | (reach << 1 & NOT_COL0) | (reach >> 1 & NOT_COL3));
        if grown == reach {
            return reach == set;
        }
        reach = grown;
    }
}

fn bits(cells: &[usize]) -> u32 {
    cells.iter().fold(0, |m, &i| m | 1 << i)
}

fn group_ssd(emb: &[Vec<f64>], cells: &[usize]) -> f64 {
    let dim = emb[0].len();
    let n = cells.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|k| cells.iter().map(|&i| emb[i][k]).sum::<f64>() / n)
        .collect();
    cells
        .iter()
        .map(|&i| (0..dim).map(|k| (emb[i][k] - mean[k]).powi(2)).sum::<f64>())
        .sum()
}

fn skater() -> Outcome {
    let grid = TileGrid::plain(1, 4, 4).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5CA7);
    let index = |t: (u32, u32)| (t.0 * 4 + t.1) as usize;

    for inst in 0..10 {
        let vertical = inst % 2 == 0;
        let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 2.0).collect();
        let emb: Vec<Vec<f64>> = (0..16)
            .map(|i| {
                let (r, c) = (i / 4, i % 4);
                let first = if vertical { c < 2 } else { r < 2 };
                let base = if first { &a } else { &b };
                base.iter()
                    .map(|x| x + rng.random_range(-0.05..0.05))
                    .collect()
            })
            .collect();
        let planted: BTreeSet<usize> = (0..16)
            .filter(|&i| if vertical { i % 4 < 2 } else { i / 4 < 2 })
            .collect();

        let mut best = (f64::INFINITY, 0u32);
        for subset in 1u32..(1 << 16) - 1 {
            if subset & 1 == 0 {
                continue;
            }
            if !connected(subset) || !connected(!subset & 0xFFFF) {
                continue;
            }
            let s: Vec<usize> = (0..16).filter(|i| subset >> i & 1 == 1).collect();
            let t: Vec<usize> = (0..16).filter(|i| subset >> i & 1 == 0).collect();
            let v = group_ssd(&emb, &s) + group_ssd(&emb, &t);
            if v < best.0 {
                best = (v, subset);
            }
        }
        let exhaustive: BTreeSet<usize> = (0..16).filter(|i| best.1 >> i & 1 == 1).collect();

        let part = skater_partition(&grid, &emb, 2).map_err(|e| e.to_string())?;
        ensure!(
            part.regions.len() == 2,
            "instance {inst}: {} regions",
            part.regions.len()
        );
        let first: BTreeSet<usize> = part.regions[0].iter().map(|&t| index(t)).collect();
        ensure!(first == planted, "instance {inst}: halves not recovered");
        ensure!(
            first == exhaustive,
            "instance {inst}: differs from exhaustive optimum"
        );
        ensure!(
            (part.ssd - best.0).abs() <= 1e-9,
            "instance {inst}: ssd {} vs optimum {}",
            part.ssd,
            best.0
        );
    }

    for inst in 0..20 {
        let emb: Vec<Vec<f64>> = (0..16)
            .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let mut prev = f64::INFINITY;
        for p in 1..=16 {
            let part = skater_partition(&grid, &emb, p).map_err(|e| e.to_string())?;
            ensure!(
                part.regions.len() == p,
                "random {inst}, P={p}: {} regions",
                part.regions.len()
            );
            let mut covered = BTreeSet::new();
            let mut ssd = 0.0;
            for region in &part.regions {
                let cells: Vec<usize> = region.iter().map(|&t| index(t)).collect();
                ensure!(
                    connected(bits(&cells)),
                    "random {inst}, P={p}: region not 4-connected"
                );
                for &c in &cells {
                    ensure!(
                        covered.insert(c),
                        "random {inst}, P={p}: tile in two regions"
                    );
                }
                ssd += group_ssd(&emb, &cells);
            }
            ensure!(
                covered.len() == 16,
                "random {inst}, P={p}: regions do not cover the grid"
            );
            ensure!(
                (ssd - part.ssd).abs() <= 1e-9,
                "random {inst}, P={p}: reported ssd {} vs {ssd}",
                part.ssd
            );
            ensure!(
                ssd <= prev + 1e-12,
                "random {inst}: ssd rises from {prev} to {ssd} at P={p}"
            );
            prev = ssd;
        }
        ensure!(prev.abs() <= 1e-12, "random {inst}: ssd at P=16 is {prev}");
    }
    Ok("10 block grids match planted halves and exhaustive optimum (|d ssd| <= 1e-9); 20 random grids monotone for P=1..16, regions 4-connected".into())
}

fn metrics_oracle() -> Outcome {
    let cm = ConfusionMatrix::from_rows(vec![vec![3, 1], vec![2, 4]]).map_err(|e| e.to_string())?;
    let r = metrics::<f64>(&cm).map_err(|e| e.to_string())?;
    // IoU (1/2, 4/7), F1 (2/3, 8/11).
    let miou = (0.5 + 4.0 / 7.0) / 2.0;
    let mf1 = (2.0 / 3.0 + 8.0 / 11.0) / 2.0;
    ensure!((r.oa - 0.7).abs() <= 1e-12, "OA {}", r.oa);
    ensure!((r.m_iou - miou).abs() <= 1e-9, "mIoU {} vs {miou}", r.m_iou);
    ensure!((r.m_f1 - mf1).abs() <= 1e-9, "mF1 {} vs {mf1}", r.m_f1);
    ensure!(
        (r.m_iou - 0.535714).abs() <= 5e-7,
        "mIoU {} does not print as 0.535714",
        r.m_iou
    );
    ensure!(
        (r.m_f1 - 0.696970).abs() <= 5e-7,
        "mF1 {} does not print as 0.696970",
        r.m_f1
    );
    let ua: Vec<f64> = r.ua.iter().map(|u| u.unwrap_or(f64::NAN)).collect();
    ensure!(
        (ua[0] - 0.6).abs() <= 1e-12 && (ua[1] - 0.8).abs() <= 1e-12,
        "UA {ua:?}"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0x3E7C);
    for k in 2..=9 {
        let rows: Vec<Vec<u64>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| if i == j { rng.random_range(1..500) } else { 0 })
                    .collect()
            })
            .collect();
        let r = metrics::<f64>(&ConfusionMatrix::from_rows(rows).unwrap())
            .map_err(|e| e.to_string())?;
        let ones = r.oa == 1.0
            && r.m_iou == 1.0
            && r.m_f1 == 1.0
            && [&r.iou, &r.f1, &r.ua]
                .iter()
                .all(|v| v.iter().all(|x| *x == Some(1.0)));
        ensure!(
            ones,
            "identity prediction with k={k} is not all ones: {r:?}"
        );
    }

    let mut checked = 0;
    for m in 0..1000 {
        let k = rng.random_range(2..=9);
        let rows: Vec<Vec<u64>> = (0..k)
            .map(|_| {
                (0..k)
                    .map(|_| {
                        if rng.random_bool(0.3) {
                            0
                        } else {
                            rng.random_range(0..100)
                        }
                    })
                    .collect()
            })
            .collect();
        if rows.iter().flatten().all(|&c| c == 0) {
            continue;
        }
        let r = metrics::<f64>(&ConfusionMatrix::from_rows(rows.clone()).unwrap())
            .map_err(|e| e.to_string())?;
        for (i, row) in rows.iter().enumerate() {
            let tp = row[i] as f64;
            let fp = rows.iter().map(|g| g[i]).sum::<u64>() as f64 - tp;
            let fn_ = row.iter().sum::<u64>() as f64 - tp;
            match (r.iou[i], r.f1[i]) {
                (Some(iou), Some(f1)) => {
                    ensure!(iou <= f1, "matrix {m}: IoU {iou} > F1 {f1} for class {i}");
                    ensure!(
                        (iou - tp / (tp + fp + fn_)).abs() <= 1e-12,
                        "matrix {m}: IoU of class {i}"
                    );
                    ensure!(
                        (f1 - 2.0 * tp / (2.0 * tp + fp + fn_)).abs() <= 1e-12,
                        "matrix {m}: F1 of class {i}"
                    );
                    checked += 1;
                }
                (None, None) => ensure!(tp + fp + fn_ == 0.0, "matrix {m}: class {i} undefined"),
                other => return Err(format!("matrix {m}: IoU/F1 definedness differs: {other:?}")),
            }
        }
    }
    Ok(format!(
        "OA 0.7, mIoU {:.9}, mF1 {:.9} (1e-9 of exact), UA (0.6, 0.8); identity all 1; IoU <= F1 on {checked} classes of 1000 matrices",
        miou, mf1
    ))
}

fn mcae(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mcae"))
        .args(["--log-level", "warn"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "mcae {args:?} exited {}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn read_labels(path: &Path) -> Result<image::GrayImage, String> {
    Ok(image::open(path)
        .map_err(|e| format!("{}: {e}", path.display()))?
        .into_luma8())
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path().join("scene");
    let dir_s = dir.to_str().unwrap();
    mcae(&["synth", "--out", dir_s])?;
    let config = dir.join("scene.toml");
    let config = config.to_str().unwrap();
    let run = || -> Result<Vec<u8>, String> {
        mcae(&["--config", config, "run", "--auto-label"])?;
        std::fs::read(dir.join("run/manifest.json")).map_err(|e| e.to_string())
    };
    let first = run()?;
    let second = run()?;
    let (h1, h2) = (sha256_hex(&first), sha256_hex(&second));
    ensure!(h1 == h2, "manifest hashes differ: {h1} vs {h2}");
    let manifest: serde_json::Value = serde_json::from_slice(&first).map_err(|e| e.to_string())?;
    ensure!(
        manifest["completed"] == serde_json::json!(true),
        "run not completed: {manifest}"
    );

    let sparse = read_labels(&dir.join("run/sparse.png"))?;
    let gt = read_labels(&dir.join("gt.png"))?;
    ensure!(
        sparse.dimensions() == gt.dimensions(),
        "raster sizes differ"
    );
    let (mut painted, mut agree) = (0u64, 0u64);
    for (s, g) in sparse.pixels().zip(gt.pixels()) {
        if s.0[0] != IGNORE_ID {
            painted += 1;
            agree += u64::from(s.0[0] == g.0[0]);
        }
    }
    ensure!(painted > 0, "nothing painted");
    ensure!(
        agree == painted,
        "{agree} of {painted} painted pixels agree with ground truth"
    );
    Ok(format!(
        "manifest sha256 {} on both runs; {painted} painted px, 100% agree with gt",
        &h1[..16]
    ))
}

fn loss_closed_forms() -> Outcome {
    let cfg = ConsistencyLossConfig {
        temperature: 1.0f64,
    };
    // M masks, each a 2x2 block side by side on a 2M x 2 map.
    let blocks = |m: u32| -> Vec<RunLengthMask> {
        (0..m)
            .map(|i| {
                PixelSet::from_rect(BBox::new(2 * i as i32, 0, 2, 2))
                    .to_mask()
                    .unwrap()
            })
            .collect()
    };

    let single = FeatureMap::from_fn(2, 2, 3, |x, y| unit(vec![1.0 + x as f64, y as f64, 0.5]));
    let l =
        crop_consistency_score(&single, &single, &blocks(1), &cfg).map_err(|e| e.to_string())?;
    ensure!(l == 0.0, "single mask scores {l}");

    let mut worst = 0.0f64;
    for m in 2..=10u32 {
        let v = unit(vec![0.3, -0.2, 0.9, 0.1]);
        let same = FeatureMap::from_fn(2 * m, 2, 4, |_, _| v.clone());
        let default_tau = ConsistencyLossConfig::<f64>::default();
        for c in [&cfg, &default_tau] {
            let l =
                crop_consistency_score(&same, &same, &blocks(m), c).map_err(|e| e.to_string())?;
            let want = f64::from(m).ln();
            ensure!(
                (l - want).abs() <= 1e-6,
                "M={m} identical, tau {}: {l} vs ln M {want}",
                c.temperature
            );
            worst = worst.max((l - want).abs());
        }

        let ortho = FeatureMap::from_fn(2 * m, 2, m as usize, |x, _| {
            let mut e = vec![0.0; m as usize];
            e[(x / 2) as usize] = 1.0;
            e
        });
        let l =
            crop_consistency_score(&ortho, &ortho, &blocks(m), &cfg).map_err(|e| e.to_string())?;
        let e = std::f64::consts::E;
        let want = -(e / (e + f64::from(m) - 1.0)).ln();
        ensure!((l - want).abs() <= 1e-6, "M={m} orthogonal: {l} vs {want}");
        worst = worst.max((l - want).abs());
    }
    Ok(format!(
        "single mask 0; ln M and orthogonal closed form for M=2..10, max |d| {worst:.1e} <= 1e-6"
    ))
}
