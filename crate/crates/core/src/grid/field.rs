use serde::{Deserialize, Serialize};
use std::ops::{Deref, DerefMut};

/// Real values over the points of a [`super::SpatialGrid`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GridField(Vec<f64>);

impl GridField {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &GridField) -> GridField {
        GridField(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &GridField) -> GridField {
        GridField(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn mul(&self, other: &GridField) -> GridField {
        GridField(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect())
    }

    pub fn scale(&self, s: f64) -> GridField {
        GridField(self.0.iter().map(|a| a * s).collect())
    }

    pub fn add_assign(&mut self, other: &GridField) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: f64, other: &GridField) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += s * b;
        }
    }

    /// `self += x ⊙ y` pointwise.
    pub fn add_product(&mut self, x: &GridField, y: &GridField) {
        for ((a, b), c) in self.0.iter_mut().zip(&x.0).zip(&y.0) {
            *a += b * c;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField(self.0.iter().map(|&v| f(v)).collect())
    }

    /// Largest minus smallest value.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .0
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        hi - lo
    }
}

impl Deref for GridField {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GridField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for GridField {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}
