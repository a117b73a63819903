//! Deterministic synthetic scenes with planted structure, used by tests,
//! benchmarks and the `synth` command.
//!
//! A scene holds a mosaic image, ground-truth and noisy prediction rasters,
//! fine masks on the overlapping grid and coarse masks on the half-resolution
//! grid. Planted structure on the default 10x10 grid:
//!
//! * a colony of 30 buildings inside small window (0, 0);
//! * 8 ponds spread over large window (0, 0), at most 2 per small window;
//! * a colony of 20 trees inside small window (3, 6);
//! * agricultural fields seen only at the coarse scale, each holding a
//!   sub-plot seen at the fine scale;
//! * lakes whose fine mask sticks partly out of the coarse one;
//! * two objects in the top band whose fine copies disagree (IoU 0.5);
//! * scattered stragglers.
//!
//! Smaller grids keep whatever pieces fit.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::majority_vote_label;
use crate::config::EngineConfig;
use crate::features::{export_features, FeatureTable};
use crate::pipeline::fuse_inputs;
use crate::raster::{
    write_label_png, write_mask_set, BBox, LabelRaster, MaskRecord, PixelSet, RunLengthMask, Scale,
    TileGrid, IGNORE_ID,
};
use crate::{Error, Result};

pub const BAREGROUND: u8 = 1;
pub const TREE: u8 = 4;
pub const WATER: u8 = 5;
pub const AGRICULTURE: u8 = 6;
pub const BUILDING: u8 = 7;

/// Dimension of the planted feature vectors.
pub const PLANTED_DIM: usize = 16;

pub const SCENE_CONFIG: &str = "scene.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub tile_size: u32,
    pub rows: u32,
    pub cols: u32,
    /// Probability that a prediction pixel is replaced by a random class.
    pub pixel_noise: f64,
    /// Probability that a whole object is predicted as another class.
    pub object_noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            tile_size: 64,
            rows: 10,
            cols: 10,
            pixel_noise: 0.05,
            object_noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Colony,
    Pond,
    Field,
    Subplot,
    Lake,
    Conflict,
    Straggler,
}

/// One planted object in mosaic coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObjectLine", into = "ObjectLine")]
pub struct PlantedObject {
    pub id: u64,
    pub class: u8,
    pub role: Role,
    pub mask: RunLengthMask,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectLine {
    id: u64,
    class: u8,
    role: Role,
    bbox: BBox,
    rle: Vec<u32>,
}

impl TryFrom<ObjectLine> for PlantedObject {
    type Error = Error;
    fn try_from(l: ObjectLine) -> Result<Self> {
        Ok(PlantedObject {
            id: l.id,
            class: l.class,
            role: l.role,
            mask: RunLengthMask::from_parts(l.bbox, l.rle)?,
        })
    }
}

impl From<PlantedObject> for ObjectLine {
    fn from(o: PlantedObject) -> Self {
        ObjectLine {
            id: o.id,
            class: o.class,
            role: o.role,
            bbox: o.mask.bbox(),
            rle: o.mask.runs().to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    /// Engine settings for the scene, with file names relative to the
    /// scene directory.
    pub config: EngineConfig,
    pub image: RgbImage,
    pub ground_truth: LabelRaster,
    pub prediction: LabelRaster,
    pub fine: Vec<MaskRecord>,
    pub coarse: Vec<MaskRecord>,
    pub objects: Vec<PlantedObject>,
    /// Fine mask ids planted as cross-tile disagreements.
    pub conflict_ids: Vec<u64>,
    /// Class prototype plus noise for every fused mask.
    pub features: FeatureTable<f32>,
}

fn color(class: u8) -> [u8; 3] {
    match class {
        TREE => [60, 130, 40],
        WATER => [40, 150, 220],
        AGRICULTURE => [200, 210, 40],
        BUILDING => [200, 80, 40],
        _ => [150, 190, 110],
    }
}

const SUBPLOT_COLOR: [u8; 3] = [185, 205, 50];
const PIXEL_SIZE_M: f64 = 0.5;

/// Free-space bookkeeping for placing non-touching objects.
struct Canvas {
    w: i32,
    h: i32,
    taken: Vec<bool>,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        Self {
            w: w as i32,
            h: h as i32,
            taken: vec![false; (w * h) as usize],
        }
    }

    fn free(&self, b: BBox, margin: i32) -> bool {
        let (x0, y0) = (b.x0 - margin, b.y0 - margin);
        let (x1, y1) = (b.x1() + margin, b.y1() + margin);
        if b.x0 < 0 || b.y0 < 0 || b.x1() > self.w || b.y1() > self.h {
            return false;
        }
        (y0.max(0)..y1.min(self.h))
            .all(|y| (x0.max(0)..x1.min(self.w)).all(|x| !self.taken[(y * self.w + x) as usize]))
    }

    fn take(&mut self, b: BBox) {
        for y in b.y0..b.y1() {
            for x in b.x0..b.x1() {
                self.taken[(y * self.w + x) as usize] = true;
            }
        }
    }

    /// Random free spot for a `w x h` box inside `region`, with coordinates
    /// snapped to multiples of `align`.
    fn place(
        &mut self,
        rng: &mut ChaCha8Rng,
        region: BBox,
        w: u32,
        h: u32,
        align: i32,
    ) -> Option<BBox> {
        let span_x = region.w as i32 - w as i32;
        let span_y = region.h as i32 - h as i32;
        if span_x < 0 || span_y < 0 {
            return None;
        }
        for _ in 0..2000 {
            let x = region.x0 + rng.random_range(0..=span_x);
            let y = region.y0 + rng.random_range(0..=span_y);
            let (x, y) = (x - x.rem_euclid(align), y - y.rem_euclid(align));
            let b = BBox::new(x, y, w, h);
            if b.x0 >= region.x0 && b.y0 >= region.y0 && self.free(b, 3) {
                self.take(b);
                return Some(b);
            }
        }
        None
    }
}

struct Builder {
    rng: ChaCha8Rng,
    canvas: Canvas,
    t: u32,
    rows: u32,
    cols: u32,
    objects: Vec<PlantedObject>,
    /// Mosaic-frame pixel sets seen at the fine scale.
    fine: Vec<PixelSet>,
    /// Mosaic-frame rectangles seen at the coarse scale (even-aligned).
    coarse: Vec<BBox>,
    /// Fine copies planted with a deliberate disagreement: (full set in
    /// the left tile, truncated set in the right tile, left fine column).
    conflicts: Vec<(PixelSet, PixelSet, u32)>,
}

impl Builder {
    fn region(&self, r0: u32, c0: u32, r1: u32, c1: u32) -> Option<BBox> {
        let (r1, c1) = (r1.min(self.rows), c1.min(self.cols));
        (r0 < r1 && c0 < c1).then(|| {
            BBox::new(
                (c0 * self.t) as i32,
                (r0 * self.t) as i32,
                (c1 - c0) * self.t,
                (r1 - r0) * self.t,
            )
        })
    }

    fn plant(&mut self, class: u8, role: Role, b: BBox) -> PixelSet {
        let p = PixelSet::from_rect(b);
        self.objects.push(PlantedObject {
            id: self.objects.len() as u64 + 1,
            class,
            role,
            mask: p.to_mask().expect("non-empty"),
        });
        p
    }

    fn scatter(&mut self, region: Option<BBox>, n: usize, class: u8, role: Role, size: (u32, u32)) {
        let Some(region) = region else { return };
        for _ in 0..n {
            let w = self.rng.random_range(size.0..=size.1);
            let h = self.rng.random_range(size.0..=size.1);
            if let Some(b) = self.canvas.place(&mut self.rng, region, w, h, 1) {
                let p = self.plant(class, role, b);
                self.fine.push(p);
            }
        }
    }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    if spec.tile_size < 32 || !spec.tile_size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(
            "synthetic tile size must be even and at least 32".into(),
        ));
    }
    if spec.rows < 2 || spec.cols < 2 {
        return Err(Error::InvalidArgument(
            "synthetic scenes need at least 2x2 tiles".into(),
        ));
    }
    for p in [spec.pixel_noise, spec.object_noise] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "noise probability {p} outside [0, 1]"
            )));
        }
    }
    let config = EngineConfig {
        schema: "oem8".into(),
        tile_size: spec.tile_size,
        rows: spec.rows,
        cols: spec.cols,
        overlap_ratio: 0.5,
        pixel_size_m: PIXEL_SIZE_M,
        seed: spec.seed,
        auto_label: true,
        n_per_region: 10,
        fine_masks: Some("fine.jsonl".into()),
        coarse_masks: Some("coarse.jsonl".into()),
        image: Some("mosaic.png".into()),
        reference: Some("gt.png".into()),
        ground_truth: Some("gt.png".into()),
        prediction: Some("pred.png".into()),
        run_dir: Some("run".into()),
        ..EngineConfig::default()
    };
    config.validate()?;
    let grid = config.annotation_grid()?;
    let fine_grid = config.fine_grid()?;
    let coarse_grid = config.coarse_grid()?;
    let (w, h) = grid.mosaic_size();
    let t = spec.tile_size;

    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        canvas: Canvas::new(w, h),
        t,
        rows: spec.rows,
        cols: spec.cols,
        objects: Vec::new(),
        fine: Vec::new(),
        coarse: Vec::new(),
        conflicts: Vec::new(),
    };

    // Disagreeing copies: a 16x16 object in the top band (one fine row)
    // inside the overlap of exactly two fine columns.
    let stride = fine_grid.stride();
    if spec.cols >= 6 {
        for j in [2 * (spec.cols - 3) + 1, 2 * (spec.cols - 2) + 1] {
            let x0 = (j * stride) as i32 + 8;
            let obj = BBox::new(x0, 8, 16, 16);
            if b.canvas.free(obj, 3) {
                b.canvas.take(obj);
                let full = b.plant(BUILDING, Role::Conflict, obj);
                let half = PixelSet::from_rect(BBox::new(x0, 8, 8, 16));
                b.conflicts.push((full, half, j - 1));
            }
        }
    }

    b.scatter(b.region(0, 0, 3, 3), 30, BUILDING, Role::Colony, (8, 13));
    if spec.rows >= 5 && spec.cols >= 5 {
        for (r0, c0) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            let region = b.region(r0, c0, (r0 + 3).min(5), (c0 + 3).min(5));
            b.scatter(region, 2, WATER, Role::Pond, (12, 16));
        }
    }
    b.scatter(b.region(3, 6, 6, 9), 20, TREE, Role::Colony, (8, 14));

    // Coarse fields with a fine sub-plot each.
    if let Some(region) = b.region(6, 0, 9, 5) {
        for _ in 0..6 {
            let Some(f) = b.canvas.place(&mut b.rng, region, 40, 40, 2) else {
                continue;
            };
            b.plant(AGRICULTURE, Role::Field, f);
            b.coarse.push(f);
            let ox = 2 * b.rng.random_range(4..=10);
            let oy = 2 * b.rng.random_range(4..=10);
            let sub = b.plant(
                AGRICULTURE,
                Role::Subplot,
                BBox::new(f.x0 + ox, f.y0 + oy, 12, 12),
            );
            b.fine.push(sub);
        }
    }
    // Lakes: 32x20 coarse body, 16x16 fine mask half outside it.
    if let Some(region) = b.region(6, 5, 9, 10) {
        for _ in 0..4 {
            let Some(u) = b.canvas.place(&mut b.rng, region, 40, 20, 2) else {
                continue;
            };
            let body = BBox::new(u.x0, u.y0, 32, 20);
            b.plant(WATER, Role::Lake, body);
            b.coarse.push(body);
            let lobe = b.plant(WATER, Role::Lake, BBox::new(u.x0 + 24, u.y0 + 2, 16, 16));
            b.fine.push(lobe);
        }
    }
    // Stragglers stay clear of the pond window.
    let clear = (5 * t) as i32;
    for _ in 0..12 {
        let class = [BUILDING, TREE, AGRICULTURE, WATER][b.rng.random_range(0..4)];
        let all = BBox::new(0, 0, w, h);
        let size = (b.rng.random_range(8..=16), b.rng.random_range(8..=16));
        for _ in 0..50 {
            let Some(spot) = b.canvas.place(&mut b.rng, all, size.0, size.1, 1) else {
                break;
            };
            if spot.x1() <= clear && spot.y1() <= clear {
                // Give the spot back and retry elsewhere.
                for y in spot.y0..spot.y1() {
                    for x in spot.x0..spot.x1() {
                        b.canvas.taken[(y * b.canvas.w + x) as usize] = false;
                    }
                }
                continue;
            }
            let p = b.plant(class, Role::Straggler, spot);
            b.fine.push(p);
            break;
        }
    }

    // Rasters.
    let mut gt = LabelRaster::filled(w, h, BAREGROUND, PIXEL_SIZE_M);
    let mut image = RgbImage::new(w, h);
    for o in &b.objects {
        gt.paint(&o.mask.to_pixels(), o.class);
    }
    let subplots: Vec<PixelSet> = b
        .objects
        .iter()
        .filter(|o| o.role == Role::Subplot)
        .map(|o| o.mask.to_pixels())
        .collect();
    let subplot_px = PixelSet::union_all(&subplots);
    let mut noise = ChaCha8Rng::seed_from_u64(spec.seed);
    noise.set_stream(1);
    for y in 0..h {
        for x in 0..w {
            let base = if subplot_px.contains(x as i32, y as i32) {
                SUBPLOT_COLOR
            } else {
                color(gt.get(x, y))
            };
            let px = base.map(|c| (c as i32 + noise.random_range(-6..=6)).clamp(0, 255) as u8);
            image.put_pixel(x, y, Rgb(px));
        }
    }

    let mut pred = gt.clone();
    let mut pn = ChaCha8Rng::seed_from_u64(spec.seed);
    pn.set_stream(2);
    for o in &b.objects {
        if pn.random_bool(spec.object_noise) {
            let other = (o.class + pn.random_range(1..8)) % 8;
            pred.paint(&o.mask.to_pixels(), other);
        }
    }
    for y in 0..h {
        for x in 0..w {
            if pn.random_bool(spec.pixel_noise) {
                pred.set(x, y, pn.random_range(0..8));
            }
        }
    }

    // Fine masks: every fine tile sees the part of each object inside it.
    let mut fine = Vec::new();
    let mut next_id = 1u64;
    let mut emit = |pixels: &PixelSet, tile, grid: &TileGrid, scale, out: &mut Vec<MaskRecord>| {
        let (ox, oy) = grid.origin(tile);
        let mask = pixels.translate(-ox, -oy).to_mask().expect("non-empty");
        out.push(MaskRecord {
            id: next_id,
            tile,
            scale,
            mask,
        });
        next_id += 1;
        next_id - 1
    };
    for p in &b.fine {
        for tile in fine_grid.tiles() {
            let part = p.clip(fine_grid.tile_rect(tile));
            if !part.is_empty() {
                emit(&part, tile, &fine_grid, Scale::Fine, &mut fine);
            }
        }
    }
    let mut conflict_ids = Vec::new();
    for (full, half, col) in &b.conflicts {
        conflict_ids.push(emit(full, (0, *col), &fine_grid, Scale::Fine, &mut fine));
        conflict_ids.push(emit(half, (0, col + 1), &fine_grid, Scale::Fine, &mut fine));
    }
    let mut coarse = Vec::new();
    for r in &b.coarse {
        let half = BBox::new(r.x0 / 2, r.y0 / 2, r.w / 2, r.h / 2);
        let tile = coarse_grid.tile_of_point(half.x0 as f64, half.y0 as f64);
        emit(
            &PixelSet::from_rect(half),
            tile,
            &coarse_grid,
            Scale::Coarse,
            &mut coarse,
        );
    }

    // Planted features keyed by the fused mask ids.
    let fused = fuse_inputs(&fine, &coarse, &config)?.fused;
    let mut features = FeatureTable::new(PLANTED_DIM);
    let mut fr = ChaCha8Rng::seed_from_u64(spec.seed);
    fr.set_stream(3);
    for r in &fused {
        let pixels = crate::raster::global_frame(r, &grid)?.to_pixels();
        let class = majority_vote_label(&gt, &pixels);
        let mut v: Vec<f32> = (0..PLANTED_DIM)
            .map(|_| fr.random_range(-0.05..0.05))
            .collect();
        if class != IGNORE_ID {
            v[class as usize % PLANTED_DIM] += 1.0;
        }
        features.insert_renormalizing(r.id, v, f64::INFINITY)?;
    }

    Ok(SyntheticScene {
        spec: spec.clone(),
        config,
        image,
        ground_truth: gt,
        prediction: pred,
        fine,
        coarse,
        objects: b.objects,
        conflict_ids,
        features,
    })
}

impl SyntheticScene {
    /// Writes the scene files into `dir` and returns the path of its
    /// engine config.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        self.image.save(dir.join("mosaic.png"))?;
        write_label_png(&dir.join("gt.png"), &self.ground_truth, &self.config.schema)?;
        write_label_png(&dir.join("pred.png"), &self.prediction, &self.config.schema)?;
        write_mask_set(&dir.join("fine.jsonl"), &self.fine)?;
        write_mask_set(&dir.join("coarse.jsonl"), &self.coarse)?;
        let mut objects = Vec::new();
        for o in &self.objects {
            serde_json::to_writer(&mut objects, o)?;
            objects.push(b'\n');
        }
        fs::write(dir.join("objects.jsonl"), objects)?;
        export_features(&self.features, &dir.join("planted_features.mcft"))?;
        let path = dir.join(SCENE_CONFIG);
        fs::write(&path, self.config.to_toml())?;
        Ok(path)
    }

    pub fn objects_with(&self, role: Role) -> impl Iterator<Item = &PlantedObject> {
        self.objects.iter().filter(move |o| o.role == role)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::resolve_overlap_report;

    #[test]
    fn deterministic() {
        let a = generate_scene(&SceneSpec::default()).unwrap();
        let b = generate_scene(&SceneSpec::default()).unwrap();
        assert_eq!(a.fine, b.fine);
        assert_eq!(a.image, b.image);
        assert_eq!(a.prediction, b.prediction);
        let c = generate_scene(&SceneSpec {
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        assert_ne!(a.fine, c.fine);
    }

    #[test]
    fn planted_structure() {
        let s = generate_scene(&SceneSpec::default()).unwrap();
        assert_eq!(
            s.objects_with(Role::Colony)
                .filter(|o| o.class == BUILDING)
                .count(),
            30
        );
        assert_eq!(s.objects_with(Role::Pond).count(), 8);
        assert_eq!(s.objects_with(Role::Conflict).count(), 2);
        assert_eq!(s.objects_with(Role::Field).count(), 6);
        // Every object is class-pure in the ground truth.
        for o in &s.objects {
            let px = o.mask.to_pixels();
            assert!(
                s.ground_truth.values_under(&px).all(|v| v == o.class),
                "{o:?}"
            );
        }
        let r = resolve_overlap_report(
            &s.fine,
            &s.config.fine_grid().unwrap(),
            &s.config.consistency(),
        )
        .unwrap();
        let mut got = r.conflicts.clone();
        got.sort();
        assert_eq!(got, s.conflict_ids);
    }

    #[test]
    fn small_grids_work() {
        let s = generate_scene(&SceneSpec {
            rows: 2,
            cols: 2,
            ..Default::default()
        })
        .unwrap();
        assert!(!s.fine.is_empty());
        assert!(generate_scene(&SceneSpec {
            rows: 1,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn writes_loadable_config() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_scene(&SceneSpec::default()).unwrap();
        let p = s.write(dir.path()).unwrap();
        let cfg = EngineConfig::load(&p).unwrap();
        assert_eq!(cfg.fine_masks.unwrap(), dir.path().join("fine.jsonl"));
        assert!(dir.path().join("planted_features.mcft").exists());
    }
}
