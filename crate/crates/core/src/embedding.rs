//! Unit-norm embedding vectors and cosine similarity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A unit-L2-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// L2-normalizes `raw`. A zero or non-finite vector is rejected.
    pub fn normalized(raw: Vec<f32>) -> Result<Self> {
        let norm = l2_norm(&raw);
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Precondition(
                "cannot normalize a zero or non-finite embedding".into(),
            ));
        }
        Ok(Self(raw.into_iter().map(|x| (x as f64 / norm) as f32).collect()))
    }

    /// Wraps an already-normalized vector; the norm must be 1 within 1e-5.
    pub fn from_unit(v: Vec<f32>) -> Result<Self> {
        let norm = l2_norm(&v);
        if (norm - 1.0).abs() > 1e-5 {
            return Err(Error::Precondition(format!("embedding norm {norm} is not 1")));
        }
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        cosine(&self.0, &other.0)
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn l2_norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}
