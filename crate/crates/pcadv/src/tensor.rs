//! Dense tensors and named parameter bundles, generic over the scalar type.
//! The networks train in f32; the f64 instantiation exists for high-precision
//! gradient oracles.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A dense row-major array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorOf<R: Real> {
    shape: Vec<usize>,
    data: Vec<R>,
}

/// Working-precision tensor.
pub type Tensor = TensorOf<f32>;

impl<R: Real> TensorOf<R> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![R::zero(); len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<R>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::invalid_argument(format!(
                "tensor shape {shape:?} wants {expect} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, R> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        // A non-finite entry poisons the f64 sum.
        self.data.iter().map(|v| v.as_f64()).sum::<f64>().is_finite()
    }

    pub fn cast<S: Real>(&self) -> TensorOf<S> {
        TensorOf {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| S::of_f64(v.as_f64())).collect(),
        }
    }
}

/// Named map from parameter name to tensor. Iteration order is the sorted
/// name order, which keeps training and serialization deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBundleOf<R: Real> {
    entries: BTreeMap<String, TensorOf<R>>,
}

/// Working-precision bundle.
pub type TensorBundle = TensorBundleOf<f32>;

impl<R: Real> Default for TensorBundleOf<R> {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }
}

impl<R: Real> TensorBundleOf<R> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: TensorOf<R>) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> &TensorOf<R> {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter tensor `{name}`"))
    }

    pub fn try_get(&self, name: &str) -> Option<&TensorOf<R>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut TensorOf<R> {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter tensor `{name}`"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TensorOf<R>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut TensorOf<R>)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same names, each tensor zeroed. The gradient accumulator shape.
    pub fn zeros_like(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), TensorOf::zeros(v.shape())))
            .collect();
        Self { entries }
    }

    /// Checks that `other` carries exactly the same names and shapes.
    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::invalid_argument(
                "bundle shape mismatch: different entry counts",
            ));
        }
        for ((ka, ta), (kb, tb)) in self.entries.iter().zip(other.entries.iter()) {
            if ka != kb || ta.shape() != tb.shape() {
                return Err(Error::invalid_argument(format!(
                    "bundle shape mismatch at `{ka}` vs `{kb}`"
                )));
            }
        }
        Ok(())
    }

    /// In-place `self += other * scale`.
    pub fn add_scaled(&mut self, other: &Self, scale: R) {
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(other.entries.iter()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += *y * scale;
            }
        }
    }

    pub fn cast<S: Real>(&self) -> TensorBundleOf<S> {
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), v.cast()))
            .collect();
        TensorBundleOf { entries }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_shape() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn all_finite_detects_nan_and_inf() {
        let mut t = Tensor::zeros(&[4]);
        assert!(t.all_finite());
        t.data_mut()[2] = f32::NAN;
        assert!(!t.all_finite());
        t.data_mut()[2] = f32::INFINITY;
        assert!(!t.all_finite());
    }

    #[test]
    fn bundle_shape_check() {
        let mut a = TensorBundle::new();
        a.insert("w", Tensor::zeros(&[2, 2]));
        let b = a.zeros_like();
        assert!(a.check_same_shape(&b).is_ok());
        let mut c = TensorBundle::new();
        c.insert("w", Tensor::zeros(&[2, 3]));
        assert!(a.check_same_shape(&c).is_err());
    }

    #[test]
    fn cast_round_trips_f32_values() {
        let t = Tensor::from_vec(&[3], vec![0.5, -1.25, 3.0]).unwrap();
        let d: TensorOf<f64> = t.cast();
        assert_eq!(d.data(), &[0.5, -1.25, 3.0]);
        let back: Tensor = d.cast();
        assert_eq!(back, t);
    }
}
