//! Confusion-matrix accuracy metrics and class-area reporting.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::raster::{read_label_png, ClassSchema, LabelRaster, IGNORE_ID};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// `K x K` pixel tally; rows are ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u64>>", into = "Vec<Vec<u64>>")]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument(
                "confusion matrix must be square".into(),
            ));
        }
        Ok(Self {
            k,
            counts: rows.into_iter().flatten().collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn add(&mut self, gt: usize, pred: usize, n: u64) {
        self.counts[gt * self.k + pred] += n;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::InvalidArgument(format!(
                "cannot add a {}-class matrix to a {}-class one",
                other.k, self.k
            )));
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.k.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }

    pub fn tp(&self, i: usize) -> u64 {
        self.get(i, i)
    }

    pub fn fp(&self, i: usize) -> u64 {
        (0..self.k).map(|r| self.get(r, i)).sum::<u64>() - self.tp(i)
    }

    pub fn fn_(&self, i: usize) -> u64 {
        (0..self.k).map(|c| self.get(i, c)).sum::<u64>() - self.tp(i)
    }
}

impl TryFrom<Vec<Vec<u64>>> for ConfusionMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<u64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<ConfusionMatrix> for Vec<Vec<u64>> {
    fn from(m: ConfusionMatrix) -> Self {
        m.rows()
    }
}

/// Tallies every pixel whose ground truth is not ignore.
pub fn confusion(
    gt: &LabelRaster,
    pred: &LabelRaster,
    schema: &ClassSchema,
) -> Result<ConfusionMatrix> {
    if (gt.width(), gt.height()) != (pred.width(), pred.height()) {
        return Err(Error::RasterSize {
            want_w: gt.width(),
            want_h: gt.height(),
            got_w: pred.width(),
            got_h: pred.height(),
        });
    }
    let k = schema.k();
    let w = gt.width().max(1) as usize;
    gt.data()
        .par_chunks(w)
        .zip(pred.data().par_chunks(w))
        .map(|(g_row, p_row)| {
            let mut m = ConfusionMatrix::new(k);
            for (&g, &p) in g_row.iter().zip(p_row) {
                if g == IGNORE_ID {
                    continue;
                }
                let g = schema.check(g)?;
                let p = schema.check(p)?;
                m.add(g as usize, p as usize, 1);
            }
            Ok(m)
        })
        .try_reduce(
            || ConfusionMatrix::new(k),
            |mut a, b| {
                a.merge(&b)?;
                Ok(a)
            },
        )
}

/// Overall accuracy plus per-class IoU, F1 and user's accuracy. Undefined
/// ratios (0/0) are `None` and left out of the means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub oa: T,
    pub iou: Vec<Option<T>>,
    pub f1: Vec<Option<T>>,
    pub ua: Vec<Option<T>>,
    pub m_iou: T,
    pub m_f1: T,
}

pub fn metrics<T: Scalar>(cm: &ConfusionMatrix) -> Result<MetricsReport<T>> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let ratio = |num: u64, den: u64| {
        (den > 0).then(|| T::of_usize(num as usize) / T::of_usize(den as usize))
    };
    let k = cm.k();
    let trace: u64 = (0..k).map(|i| cm.tp(i)).sum();
    let mut iou = Vec::with_capacity(k);
    let mut f1 = Vec::with_capacity(k);
    let mut ua = Vec::with_capacity(k);
    for i in 0..k {
        let (tp, fp, fn_) = (cm.tp(i), cm.fp(i), cm.fn_(i));
        iou.push(ratio(tp, tp + fp + fn_));
        f1.push(ratio(2 * tp, 2 * tp + fp + fn_));
        ua.push(ratio(tp, tp + fp));
    }
    let mean = |v: &[Option<T>]| {
        let present: Vec<T> = v.iter().flatten().copied().collect();
        present.iter().copied().sum::<T>() / T::of_usize(present.len())
    };
    Ok(MetricsReport {
        oa: ratio(trace, total).expect("total > 0"),
        m_iou: mean(&iou),
        m_f1: mean(&f1),
        iou,
        f1,
        ua,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassArea {
    pub class_id: u8,
    pub name: String,
    pub pixels: u64,
    pub hectares: f64,
}

/// Per-class area in hectares: `count * pixel_size_m^2 / 10_000`.
pub fn area_report(raster: &LabelRaster, schema: &ClassSchema) -> Result<Vec<ClassArea>> {
    let px = raster.pixel_size_m;
    if !(px > 0.0 && px.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "pixel size {px} m must be positive"
        )));
    }
    let mut counts = [0u64; 256];
    for &v in raster.data() {
        counts[v as usize] += 1;
    }
    Ok(schema
        .classes()
        .iter()
        .map(|c| ClassArea {
            class_id: c.id,
            name: c.name.clone(),
            pixels: counts[c.id as usize],
            hectares: counts[c.id as usize] as f64 * px * px / 10_000.0,
        })
        .collect())
}

/// Evaluation output written by the CLI: the metrics plus the raw matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema: String,
    pub classes: Vec<String>,
    pub tiles: usize,
    pub matrix: ConfusionMatrix,
    #[serde(flatten)]
    pub metrics: MetricsReport<f64>,
}

/// Evaluates label PNGs. Both paths are single files or directories; in the
/// directory case predictions are matched to ground truth by file name.
pub fn evaluate_paths(gt: &Path, pred: &Path, schema: &ClassSchema) -> Result<EvaluationReport> {
    let pairs: Vec<(PathBuf, PathBuf)> = if gt.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(gt)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        names.retain(|p| p.extension().is_some_and(|e| e == "png"));
        names.sort();
        names
            .into_iter()
            .map(|g| {
                let p = pred.join(g.file_name().expect("file entry"));
                if p.exists() {
                    Ok((g, p))
                } else {
                    Err(Error::MissingFile(p))
                }
            })
            .collect::<Result<_>>()?
    } else {
        vec![(gt.to_path_buf(), pred.to_path_buf())]
    };
    let mut cm = ConfusionMatrix::new(schema.k());
    for (g, p) in &pairs {
        let (g, _) = read_label_png(g)?;
        let (p, _) = read_label_png(p)?;
        cm.merge(&confusion(&g, &p, schema)?)?;
    }
    Ok(EvaluationReport {
        schema: schema.name().to_string(),
        classes: schema.classes().iter().map(|c| c.name.clone()).collect(),
        tiles: pairs.len(),
        metrics: metrics(&cm)?,
        matrix: cm,
    })
}
