use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{serde_vecs, RealVector};

/// Vector-valued sequence phi(n), n in [start, start + len), zero elsewhere.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FiniteWindowSequence {
    pub start: i64,
    #[serde(with = "serde_vecs")]
    pub values: Vec<RealVector>,
}

impl FiniteWindowSequence {
    pub fn new(start: i64, values: Vec<RealVector>) -> Result<Self> {
        if let Some(d) = values.first().map(|v| v.len()) {
            if values.iter().any(|v| v.len() != d) {
                return Err(Error::Input("sequence entries differ in dimension".into()));
            }
            if values.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
                return Err(Error::Input("sequence has non-finite entries".into()));
            }
        }
        Ok(FiniteWindowSequence { start, values })
    }

    pub fn zeros(start: i64, len: usize, dim: usize) -> Self {
        FiniteWindowSequence { start, values: vec![RealVector::zeros(dim); len] }
    }

    /// e_j at time n0, zero elsewhere in the window.
    pub fn impulse(start: i64, len: usize, dim: usize, n0: i64, j: usize) -> Self {
        let mut s = Self::zeros(start, len, dim);
        if let Some(v) = s.get_mut(n0) {
            v[j] = 1.0;
        }
        s
    }

    pub fn from_flat(start: i64, dim: usize, flat: &[f64]) -> Result<Self> {
        if dim == 0 || !flat.len().is_multiple_of(dim) {
            return Err(Error::Input("flat data length is not a multiple of the dimension".into()));
        }
        let values = flat.chunks(dim).map(RealVector::from_column_slice).collect();
        Self::new(start, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    /// Last time in the window.
    pub fn end(&self) -> i64 {
        self.start + self.values.len() as i64 - 1
    }

    pub fn get(&self, n: i64) -> Option<&RealVector> {
        if n < self.start {
            return None;
        }
        self.values.get((n - self.start) as usize)
    }

    pub fn get_mut(&mut self, n: i64) -> Option<&mut RealVector> {
        if n < self.start {
            return None;
        }
        self.values.get_mut((n - self.start) as usize)
    }

    /// phi(n) or zero outside the window.
    pub fn value(&self, n: i64) -> RealVector {
        self.get(n).cloned().unwrap_or_else(|| RealVector::zeros(self.dim()))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Whether |phi| stays below `tol` on the outermost 10% of the window, at each end.
    pub fn decay_flags(&self, tol: f64) -> (bool, bool) {
        let m = (self.len() / 10).max(1).min(self.len());
        let left = self.values.iter().take(m).all(|v| v.norm() < tol);
        let right = self.values.iter().rev().take(m).all(|v| v.norm() < tol);
        (left, right)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.start != other.start || self.len() != other.len() {
            return Err(Error::Input("sequences live on different windows".into()));
        }
        Ok(FiniteWindowSequence {
            start: self.start,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        FiniteWindowSequence { start: self.start, values: self.values.iter().map(|v| v * c).collect() }
    }

    pub fn flatten(&self) -> RealVector {
        let d = self.dim();
        let mut out = RealVector::zeros(d * self.len());
        for (i, v) in self.values.iter().enumerate() {
            out.rows_mut(i * d, d).copy_from(v);
        }
        out
    }
}
