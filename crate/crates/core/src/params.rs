//! Flat parameter vectors shared by models, aggregation and the simulator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A model's parameters as one flat vector of reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_dim(&self, other: &ParamVector, what: &str) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::invalid(format!(
                "{what}: dimension mismatch ({} vs {})",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_same_dim(other, "dot")?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_same_dim(other, "sub")?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// Convex blend `(1 - weight) * self + weight * other`.
    pub fn lerp(&self, other: &ParamVector, weight: f64) -> Result<ParamVector> {
        self.check_same_dim(other, "lerp")?;
        Ok(ParamVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (1.0 - weight) * a + weight * b)
                .collect(),
        ))
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// Arithmetic mean of equally sized vectors, or `weights`-weighted if given.
pub fn weighted_mean(models: &[&ParamVector], weights: &[f64]) -> Result<ParamVector> {
    let first = models
        .first()
        .ok_or_else(|| Error::invalid("weighted_mean: no models"))?;
    if weights.len() != models.len() {
        return Err(Error::invalid("weighted_mean: weights/models length mismatch"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("weighted_mean: weights must sum to a positive value"));
    }
    let mut acc = vec![0.0; first.dim()];
    for (m, &w) in models.iter().zip(weights) {
        first.check_same_dim(m, "weighted_mean")?;
        for (a, v) in acc.iter_mut().zip(m.as_slice()) {
            *a += w * v;
        }
    }
    for a in &mut acc {
        *a /= total;
    }
    Ok(ParamVector(acc))
}
