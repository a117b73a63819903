use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::decision::{ClusterDecision, Verdict};
use crate::clustering::{read_candidates, ClusterCandidate, Stage};
use crate::raster::{global_frame, read_mask_set, ClassSchema, LabelRaster, MaskRecord, TileGrid};
use crate::{Error, Result};

pub const SESSION_FILE: &str = "session.json";
pub const DECISIONS_FILE: &str = "decisions.jsonl";

/// Contents of `session.json`. Relative paths resolve against the session
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionManifest {
    pub clusters: PathBuf,
    pub masks: PathBuf,
    pub schema: String,
    pub grid: TileGrid,
    pub pixel_size_m: f64,
    /// Mosaic RGB image used for thumbnails.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
}

/// Cluster decisions over one clustering run. Only suggested candidates
/// are part of the session. The decision log is append-only; the effective
/// decision of a cluster is the last one recorded for it.
#[derive(Debug, Clone)]
pub struct SessionStore {
    schema: ClassSchema,
    grid: TileGrid,
    pixel_size_m: f64,
    clusters: BTreeMap<u64, ClusterCandidate>,
    masks: BTreeMap<u64, MaskRecord>,
    log: Vec<ClusterDecision>,
    effective: BTreeMap<u64, ClusterDecision>,
    log_path: Option<PathBuf>,
    image: Option<PathBuf>,
}

impl SessionStore {
    /// In-memory store with no backing log.
    pub fn new(
        schema: ClassSchema,
        grid: TileGrid,
        pixel_size_m: f64,
        clusters: Vec<ClusterCandidate>,
        masks: Vec<MaskRecord>,
    ) -> Result<Self> {
        grid.validate()?;
        let masks: BTreeMap<u64, MaskRecord> = masks.into_iter().map(|m| (m.id, m)).collect();
        let mut owner: HashMap<u64, u64> = HashMap::new();
        let mut by_id = BTreeMap::new();
        for c in clusters.into_iter().filter(|c| c.suggested) {
            for &m in &c.member_ids {
                if !masks.contains_key(&m) {
                    return Err(Error::UnknownMask(m));
                }
                if let Some(prev) = owner.insert(m, c.id) {
                    return Err(Error::format(
                        "cluster file",
                        format!("mask {m} belongs to clusters {prev} and {}", c.id),
                    ));
                }
            }
            if by_id.insert(c.id, c).is_some() {
                return Err(Error::format("cluster file", "duplicate cluster id"));
            }
        }
        Ok(Self {
            schema,
            grid,
            pixel_size_m,
            clusters: by_id,
            masks,
            log: Vec::new(),
            effective: BTreeMap::new(),
            log_path: None,
            image: None,
        })
    }

    /// Writes `session.json` and an empty decision log into `dir`, then
    /// opens the session. An existing session in `dir` is left alone and
    /// reported as an error.
    pub fn create(dir: &Path, manifest: &SessionManifest) -> Result<Self> {
        if dir.join(SESSION_FILE).exists() {
            return Err(Error::InvalidArgument(format!(
                "{} already holds a session",
                dir.display()
            )));
        }
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join(SESSION_FILE),
            serde_json::to_string_pretty(manifest)?,
        )?;
        File::create(dir.join(DECISIONS_FILE))?;
        Self::open(dir)
    }

    /// Loads a session directory and replays its decision log. A torn final
    /// line left by an interrupted write is truncated away.
    pub fn open(dir: &Path) -> Result<Self> {
        let mpath = dir.join(SESSION_FILE);
        let text = fs::read_to_string(&mpath).map_err(|_| Error::MissingFile(mpath.clone()))?;
        let manifest: SessionManifest = serde_json::from_str(&text)
            .map_err(|e| Error::format("session manifest", e.to_string()))?;
        let clusters = read_candidates(&dir.join(&manifest.clusters))?;
        let masks = read_mask_set(&dir.join(&manifest.masks))?;
        let schema = ClassSchema::by_name(&manifest.schema)?;
        let mut store = Self::new(
            schema,
            manifest.grid,
            manifest.pixel_size_m,
            clusters,
            masks,
        )?;
        store.image = manifest.image.map(|p| dir.join(p));

        let log_path = dir.join(DECISIONS_FILE);
        if log_path.exists() {
            for d in read_log(&log_path)? {
                store.apply(d)?;
            }
        }
        store.log_path = Some(log_path);
        Ok(store)
    }

    pub fn schema(&self) -> &ClassSchema {
        &self.schema
    }

    pub fn grid(&self) -> &TileGrid {
        &self.grid
    }

    pub fn pixel_size_m(&self) -> f64 {
        self.pixel_size_m
    }

    pub fn image_path(&self) -> Option<&Path> {
        self.image.as_deref()
    }

    /// Suggested clusters in id order.
    pub fn clusters(&self) -> impl Iterator<Item = &ClusterCandidate> {
        self.clusters.values()
    }

    pub fn cluster(&self, id: u64) -> Option<&ClusterCandidate> {
        self.clusters.get(&id)
    }

    pub fn mask(&self, id: u64) -> Option<&MaskRecord> {
        self.masks.get(&id)
    }

    pub fn log(&self) -> &[ClusterDecision] {
        &self.log
    }

    pub fn decision(&self, cluster_id: u64) -> Option<&ClusterDecision> {
        self.effective.get(&cluster_id)
    }

    /// Same session with an empty decision log and no backing file.
    pub fn fresh(&self) -> Self {
        Self {
            log: Vec::new(),
            effective: BTreeMap::new(),
            log_path: None,
            ..self.clone()
        }
    }

    pub fn validate(&self, d: &ClusterDecision) -> Result<()> {
        let c = self
            .clusters
            .get(&d.cluster_id)
            .ok_or(Error::UnknownCluster(d.cluster_id))?;
        if let Some(&m) = d
            .excluded_member_ids
            .iter()
            .find(|m| c.member_ids.binary_search(m).is_err())
        {
            return Err(Error::NotAMember {
                cluster: c.id,
                mask: m,
            });
        }
        if let Verdict::Labeled(class) = d.verdict {
            self.schema.check(class)?;
        }
        Ok(())
    }

    /// Validates the decision, appends it durably to the log (when the
    /// store is file-backed) and makes it effective.
    pub fn record_decision(&mut self, d: ClusterDecision) -> Result<()> {
        self.record_decisions(vec![d])
    }

    /// Records several decisions with a single log append.
    pub fn record_decisions(&mut self, ds: Vec<ClusterDecision>) -> Result<()> {
        for d in &ds {
            self.validate(d)?;
        }
        if let Some(path) = &self.log_path {
            let mut buf = Vec::new();
            for d in &ds {
                serde_json::to_writer(&mut buf, d)?;
                buf.push(b'\n');
            }
            let mut f = OpenOptions::new().append(true).create(true).open(path)?;
            f.write_all(&buf)?;
            f.sync_data()?;
        }
        for d in ds {
            self.apply(d)?;
        }
        Ok(())
    }

    fn apply(&mut self, mut d: ClusterDecision) -> Result<()> {
        self.validate(&d)?;
        d.excluded_member_ids.sort_unstable();
        d.excluded_member_ids.dedup();
        self.effective.insert(d.cluster_id, d.clone());
        self.log.push(d);
        Ok(())
    }

    /// First undecided cluster with id greater than `after`.
    pub fn next_undecided(&self, after: Option<u64>) -> Option<&ClusterCandidate> {
        let start = after.map_or(0, |a| a.saturating_add(1));
        self.clusters
            .range(start..)
            .map(|(_, c)| c)
            .find(|c| !self.effective.contains_key(&c.id))
    }

    /// `(mask id, class)` for every member painted by the effective state,
    /// in mask id order.
    pub fn labeled_masks(&self) -> Vec<(u64, u8)> {
        let mut out = Vec::new();
        for d in self.effective.values() {
            if let Verdict::Labeled(class) = d.verdict {
                let c = &self.clusters[&d.cluster_id];
                out.extend(
                    c.member_ids
                        .iter()
                        .filter(|m| d.excluded_member_ids.binary_search(m).is_err())
                        .map(|&m| (m, class)),
                );
            }
        }
        out.sort_unstable();
        out
    }

    pub fn progress(&self) -> Progress {
        let mut p = Progress {
            clusters_total: self.clusters.len(),
            masks_total: self.clusters.values().map(|c| c.member_ids.len()).sum(),
            ..Default::default()
        };
        let mut per_stage: BTreeMap<Stage, StageProgress> = BTreeMap::new();
        let mut per_class: BTreeMap<u8, ClassProgress> = self
            .schema
            .classes()
            .iter()
            .map(|c| {
                (
                    c.id,
                    ClassProgress {
                        class_id: c.id,
                        name: c.name.clone(),
                        clusters: 0,
                        masks: 0,
                    },
                )
            })
            .collect();
        for c in self.clusters.values() {
            let s = per_stage.entry(c.stage).or_insert(StageProgress {
                stage: c.stage,
                total: 0,
                decided: 0,
            });
            s.total += 1;
            let Some(d) = self.effective.get(&c.id) else {
                continue;
            };
            s.decided += 1;
            p.decided += 1;
            match d.verdict {
                Verdict::Labeled(class) => {
                    let n = c.member_ids.len() - d.excluded_member_ids.len();
                    p.labeled += 1;
                    p.masks_labeled += n;
                    if let Some(e) = per_class.get_mut(&class) {
                        e.clusters += 1;
                        e.masks += n;
                    }
                }
                Verdict::Rejected => p.rejected += 1,
            }
        }
        p.remaining = p.clusters_total - p.decided;
        p.per_stage = per_stage.into_values().collect();
        p.per_class = per_class.into_values().collect();
        p
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub clusters_total: usize,
    pub decided: usize,
    pub remaining: usize,
    pub labeled: usize,
    pub rejected: usize,
    pub masks_total: usize,
    pub masks_labeled: usize,
    pub per_stage: Vec<StageProgress>,
    pub per_class: Vec<ClassProgress>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageProgress {
    pub stage: Stage,
    pub total: usize,
    pub decided: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassProgress {
    pub class_id: u8,
    pub name: String,
    pub clusters: usize,
    pub masks: usize,
}

/// Reads the decision log, truncating the file after its last complete
/// line if the tail is torn.
fn read_log(path: &Path) -> Result<Vec<ClusterDecision>> {
    let bytes = fs::read(path)?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        log::warn!(
            "{}: dropping {} bytes of incomplete trailing record",
            path.display(),
            bytes.len() - complete
        );
        OpenOptions::new()
            .write(true)
            .open(path)?
            .set_len(complete as u64)?;
    }
    let text = std::str::from_utf8(&bytes[..complete])
        .map_err(|e| Error::format("decision log", e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                Error::format("decision log", format!("{}:{}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

/// Mosaic-sized raster with labeled members painted and ignore elsewhere.
pub fn export_sparse(store: &SessionStore) -> Result<LabelRaster> {
    let (w, h) = store.grid.mosaic_size();
    let mut out = LabelRaster::ignored(w, h, store.pixel_size_m);
    for (id, class) in store.labeled_masks() {
        let m = global_frame(&store.masks[&id], &store.grid)?;
        out.paint(&m.to_pixels(), class);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{write_candidates, Window};
    use crate::raster::{write_mask_set, BBox, PixelSet, Scale, IGNORE_ID};

    /// Three clusters on a 2x2 grid of 16 px tiles: cluster c owns masks
    /// 10c+1 ..= 10c+n, each a 1x(k+1) strip.
    fn fixture() -> (Vec<ClusterCandidate>, Vec<MaskRecord>) {
        let sizes = [(1u64, 5u64), (2, 3), (7, 5)];
        let mut clusters = Vec::new();
        let mut masks = Vec::new();
        for (row, &(c, n)) in sizes.iter().enumerate() {
            let members: Vec<u64> = (1..=n).map(|k| 10 * c + k).collect();
            for (k, &id) in members.iter().enumerate() {
                masks.push(MaskRecord {
                    id,
                    tile: (0, 0),
                    scale: Scale::Fused,
                    mask: PixelSet::from_rect(BBox::new(0, (row * 8 + k) as i32, k as u32 + 1, 1))
                        .to_mask()
                        .unwrap(),
                });
            }
            clusters.push(ClusterCandidate {
                id: c,
                stage: if c == 7 { Stage::Large } else { Stage::Small },
                window: Window {
                    row0: 0,
                    col0: 0,
                    span: 3,
                },
                member_ids: members,
                dominant_class: 1,
                purity: 1.0,
                suggested: true,
            });
        }
        clusters.push(ClusterCandidate {
            id: 9,
            suggested: false,
            member_ids: vec![],
            ..clusters[0].clone()
        });
        (clusters, masks)
    }

    fn store() -> SessionStore {
        let (c, m) = fixture();
        SessionStore::new(
            ClassSchema::oem8(),
            TileGrid::plain(16, 2, 2).unwrap(),
            0.5,
            c,
            m,
        )
        .unwrap()
    }

    fn painted(s: &SessionStore) -> usize {
        export_sparse(s)
            .unwrap()
            .data()
            .iter()
            .filter(|&&v| v != IGNORE_ID)
            .count()
    }

    fn area(s: &SessionStore, ids: impl IntoIterator<Item = u64>) -> usize {
        ids.into_iter()
            .map(|i| s.mask(i).unwrap().area_px() as usize)
            .sum()
    }

    #[test]
    fn only_suggested_clusters_enter() {
        let s = store();
        assert_eq!(
            s.clusters().map(|c| c.id).collect::<Vec<_>>(),
            vec![1, 2, 7]
        );
    }

    #[test]
    fn zero_decisions_export_all_ignore() {
        assert_eq!(painted(&store()), 0);
    }

    #[test]
    fn label_then_reject_reverts() {
        let mut s = store();
        s.record_decision(ClusterDecision::labeled(7, 5)).unwrap();
        let e = export_sparse(&s).unwrap();
        let water = e.data().iter().filter(|&&v| v == 5).count();
        assert_eq!(water, area(&s, 71..=75));
        s.record_decision(ClusterDecision::rejected(7)).unwrap();
        assert_eq!(painted(&s), 0);
        assert_eq!(s.log().len(), 2);
    }

    #[test]
    fn exclusions_leave_members_unpainted() {
        let mut s = store();
        s.record_decision(ClusterDecision::labeled(1, 3).excluding([12, 14]))
            .unwrap();
        assert_eq!(painted(&s), area(&s, [11, 13, 15]));
        assert_eq!(s.labeled_masks().len(), 3);
    }

    #[test]
    fn rejected_cluster_not_painted() {
        let mut s = store();
        s.record_decision(ClusterDecision::labeled(2, 5)).unwrap();
        s.record_decision(ClusterDecision::rejected(1)).unwrap();
        let e = export_sparse(&s).unwrap();
        assert_eq!(painted(&s), area(&s, 21..=23));
        for id in 11..=15 {
            let m = s.mask(id).unwrap().mask.to_pixels();
            assert!(e.values_under(&m).all(|v| v == IGNORE_ID));
        }
    }

    #[test]
    fn decision_errors_are_distinct() {
        let mut s = store();
        assert!(matches!(
            s.record_decision(ClusterDecision::labeled(99, 1)),
            Err(Error::UnknownCluster(99))
        ));
        assert!(matches!(
            s.record_decision(ClusterDecision::labeled(9, 1)),
            Err(Error::UnknownCluster(9))
        ));
        assert!(matches!(
            s.record_decision(ClusterDecision::labeled(1, 1).excluding([21])),
            Err(Error::NotAMember {
                cluster: 1,
                mask: 21
            })
        ));
        assert!(matches!(
            s.record_decision(ClusterDecision::labeled(1, 8)),
            Err(Error::InvalidClass(8))
        ));
        assert!(s.log().is_empty());
    }

    #[test]
    fn queue_order_and_progress() {
        let mut s = store();
        assert_eq!(s.next_undecided(None).unwrap().id, 1);
        s.record_decision(ClusterDecision::labeled(1, 2).excluding([11]))
            .unwrap();
        assert_eq!(s.next_undecided(None).unwrap().id, 2);
        assert_eq!(s.next_undecided(Some(2)).unwrap().id, 7);
        s.record_decision(ClusterDecision::rejected(2)).unwrap();
        let p = s.progress();
        assert_eq!(
            (p.decided, p.remaining, p.labeled, p.rejected),
            (2, 1, 1, 1)
        );
        assert_eq!((p.masks_total, p.masks_labeled), (13, 4));
        assert_eq!(p.per_class[2].masks, 4);
        assert_eq!(p.per_stage.len(), 2);
        s.record_decision(ClusterDecision::labeled(7, 0)).unwrap();
        assert!(s.next_undecided(None).is_none());
    }

    #[test]
    fn replay_from_empty_is_bit_exact() {
        let mut s = store();
        for d in [
            ClusterDecision::labeled(1, 2),
            ClusterDecision::labeled(7, 4).excluding([72]),
            ClusterDecision::rejected(1),
            ClusterDecision::labeled(2, 6),
            ClusterDecision::labeled(1, 3),
        ] {
            s.record_decision(d).unwrap();
        }
        let mut r = s.fresh();
        for d in s.log().to_vec() {
            r.record_decision(d).unwrap();
        }
        assert_eq!(export_sparse(&s).unwrap(), export_sparse(&r).unwrap());
    }

    fn on_disk() -> (tempfile::TempDir, SessionManifest) {
        let dir = tempfile::tempdir().unwrap();
        let (c, m) = fixture();
        write_candidates(&dir.path().join("clusters.jsonl"), &c).unwrap();
        write_mask_set(&dir.path().join("masks.jsonl"), &m).unwrap();
        let manifest = SessionManifest {
            clusters: "clusters.jsonl".into(),
            masks: "masks.jsonl".into(),
            schema: "oem8".into(),
            grid: TileGrid::plain(16, 2, 2).unwrap(),
            pixel_size_m: 0.5,
            image: None,
        };
        (dir, manifest)
    }

    #[test]
    fn create_refuses_an_existing_session() {
        let (dir, manifest) = on_disk();
        let mut s = SessionStore::create(dir.path(), &manifest).unwrap();
        s.record_decision(ClusterDecision::labeled(1, 2)).unwrap();
        assert!(SessionStore::create(dir.path(), &manifest).is_err());
        assert_eq!(SessionStore::open(dir.path()).unwrap().log().len(), 1);
    }

    #[test]
    fn log_survives_reopen_and_torn_tail() {
        let (dir, manifest) = on_disk();
        let mut s = SessionStore::create(dir.path(), &manifest).unwrap();
        s.record_decision(ClusterDecision::labeled(1, 2)).unwrap();
        s.record_decision(ClusterDecision::labeled(2, 3)).unwrap();
        let before = export_sparse(&s).unwrap();

        let log = dir.path().join(DECISIONS_FILE);
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(br#"{"cluster_id":7,"verdict":"lab"#).unwrap();
        drop(f);

        let r = SessionStore::open(dir.path()).unwrap();
        assert_eq!(r.log().len(), 2);
        assert_eq!(export_sparse(&r).unwrap(), before);
        assert!(fs::read(&log).unwrap().ends_with(b"\n"));
    }

    #[test]
    fn corrupt_complete_line_is_an_error() {
        let (dir, manifest) = on_disk();
        SessionStore::create(dir.path(), &manifest).unwrap();
        fs::write(dir.path().join(DECISIONS_FILE), "not json\n").unwrap();
        assert!(matches!(
            SessionStore::open(dir.path()),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            SessionStore::open(&dir.path().join("nope")),
            Err(Error::MissingFile(_))
        ));
    }
}
