use crate::raster::RunLengthMask;
use crate::scalar::{dot, normalize, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyLossConfig<T> {
    pub temperature: T,
}

impl<T: Scalar> Default for ConsistencyLossConfig<T> {
    fn default() -> Self {
        Self {
            temperature: T::from_f64_lossy(0.07),
        }
    }
}

impl<T: Scalar> ConsistencyLossConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.temperature > T::zero() && self.temperature.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )))
        }
    }
}

/// Dense per-pixel features, `height x width x dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    width: u32,
    height: u32,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(width: u32, height: u32, dim: usize, data: Vec<T>) -> Result<Self> {
        let expected = width as usize * height as usize * dim;
        if data.len() != expected {
            return Err(Error::BitmapSize {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            dim,
            data,
        })
    }

    /// Map of the given size filled by `f(x, y)`.
    pub fn from_fn(width: u32, height: u32, dim: usize, f: impl Fn(u32, u32) -> Vec<T>) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * dim);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                assert_eq!(v.len(), dim, "feature length");
                data.extend(v);
            }
        }
        Self {
            width,
            height,
            dim,
            data,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, x: u32, y: u32) -> &[T] {
        let i = (y as usize * self.width as usize + x as usize) * self.dim;
        &self.data[i..i + self.dim]
    }

    /// Mean feature over the mask's pixels, L2-normalized.
    fn pool(&self, mask: &RunLengthMask) -> Result<Vec<T>> {
        let b = mask.bbox();
        if b.x0 < 0 || b.y0 < 0 || b.x1() as u32 > self.width || b.y1() as u32 > self.height {
            return Err(Error::MaskOutOfBounds(0));
        }
        let mut acc = vec![T::zero(); self.dim];
        for (x, y) in mask.to_pixels().pixels() {
            for (a, &v) in acc.iter_mut().zip(self.at(x as u32, y as u32)) {
                *a = *a + v;
            }
        }
        if !normalize(&mut acc) {
            return Err(Error::InvalidArgument(
                "mask pools to a zero feature vector".into(),
            ));
        }
        Ok(acc)
    }
}

/// Cross-entropy of matching each mask's pooled embedding in crop A to its
/// own embedding in crop B against every other shared mask, averaged over
/// masks. A single shared mask has no negatives and scores 0.
pub fn crop_consistency_score<T: Scalar>(
    feat_a: &FeatureMap<T>,
    feat_b: &FeatureMap<T>,
    shared_masks: &[RunLengthMask],
    cfg: &ConsistencyLossConfig<T>,
) -> Result<T> {
    cfg.validate()?;
    if shared_masks.is_empty() {
        return Err(Error::InvalidArgument("no shared masks".into()));
    }
    if feat_a.dim != feat_b.dim {
        return Err(Error::DimMismatch {
            expected: feat_a.dim,
            got: feat_b.dim,
        });
    }
    if shared_masks.len() == 1 {
        feat_a.pool(&shared_masks[0])?;
        feat_b.pool(&shared_masks[0])?;
        return Ok(T::zero());
    }
    let a: Vec<Vec<T>> = shared_masks
        .iter()
        .map(|m| feat_a.pool(m))
        .collect::<Result<_>>()?;
    let b: Vec<Vec<T>> = shared_masks
        .iter()
        .map(|m| feat_b.pool(m))
        .collect::<Result<_>>()?;
    let tau = cfg.temperature;
    let mut total = T::zero();
    for (m, am) in a.iter().enumerate() {
        let logits: Vec<T> = b.iter().map(|bn| dot(am, bn) / tau).collect();
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let log_sum = max + logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln();
        total = total + (log_sum - logits[m]);
    }
    Ok(total / T::of_usize(shared_masks.len()))
}
