use std::collections::BTreeMap;

use crate::scalar::{dot, norm, Scalar};
use crate::{Error, Result};

/// Allowed deviation of a stored vector's L2 norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

/// Unit-norm feature vectors of one dimension, keyed by mask id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable<T> {
    dim: usize,
    entries: BTreeMap<u64, Vec<T>>,
}

impl<T: Scalar> FeatureTable<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&[T]> {
        self.entries.get(&id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: u64) -> bool {
        self.entries.contains_key(&id)
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, &[T])> {
        self.entries.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    /// Inserts an already unit-norm vector.
    pub fn insert(&mut self, id: u64, v: Vec<T>) -> Result<()> {
        self.check_shape(id, &v)?;
        let n = norm(&v).to_f64_lossy();
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NotUnitNorm { id, norm: n });
        }
        self.put(id, v)
    }

    /// Inserts a vector, rescaling it when its norm is within `tolerance`
    /// of 1 but outside the storage tolerance.
    pub fn insert_renormalizing(&mut self, id: u64, mut v: Vec<T>, tolerance: f64) -> Result<()> {
        self.check_shape(id, &v)?;
        let n = v
            .iter()
            .map(|x| x.to_f64_lossy() * x.to_f64_lossy())
            .sum::<f64>()
            .sqrt();
        if (n - 1.0).abs() > tolerance {
            return Err(Error::NotUnitNorm { id, norm: n });
        }
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            let s = T::from_f64_lossy(n);
            v.iter_mut().for_each(|x| *x = *x / s);
        }
        self.put(id, v)
    }

    fn check_shape(&self, id: u64, v: &[T]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteFeature(id));
        }
        Ok(())
    }

    fn put(&mut self, id: u64, v: Vec<T>) -> Result<()> {
        if self.entries.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.entries.insert(id, v);
        Ok(())
    }

    /// Mean of all vectors, L2-normalized. `None` for an empty table or a
    /// zero mean.
    pub fn mean_direction(&self) -> Option<Vec<T>> {
        let mut acc = vec![T::zero(); self.dim];
        for v in self.entries.values() {
            acc.iter_mut().zip(v).for_each(|(a, &x)| *a = *a + x);
        }
        crate::scalar::normalize(&mut acc).then_some(acc)
    }
}

/// `1 - a·b` for unit vectors.
pub fn cosine_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    T::one() - dot(a, b)
}
