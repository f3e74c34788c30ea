use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::Prototype;

/// Row-major `rows × cols` matrix of similarities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "{rows}x{cols} similarity matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("similarities must lie in [0, 1]".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

const ZERO_NORM: f64 = 1e-12;

/// `|cos(a, b)|`, or 0 when either vector is (numerically) zero.
pub fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < ZERO_NORM || nb < ZERO_NORM {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).abs().min(1.0)
}

/// Absolute cosine similarity between every moving and fixed prototype.
pub fn similarity_matrix(
    protos_x: &[Prototype],
    protos_y: &[Prototype],
) -> Result<SimilarityMatrix> {
    let channels = protos_x
        .first()
        .or_else(|| protos_y.first())
        .map(Prototype::len)
        .unwrap_or(0);
    for p in protos_x.iter().chain(protos_y) {
        if p.len() != channels {
            return Err(Error::ChannelMismatch {
                expected: channels,
                found: p.len(),
            });
        }
    }
    let values: Vec<f64> = protos_x
        .par_iter()
        .flat_map_iter(|px| {
            protos_y
                .iter()
                .map(move |py| abs_cosine(px.as_slice(), py.as_slice()))
        })
        .collect();
    SimilarityMatrix::new(protos_x.len(), protos_y.len(), values)
}
