//! Images, masks, features, prototypes, pairings and displacement fields.
//!
//! Voxel `(i, j, k)` sits at physical point `(i·s0, j·s1, k·s2)`; coordinates
//! follow the grid axis order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Coord, Dims};

fn check_spacing(dims: &Dims, spacing: &[f64]) -> Result<()> {
    if spacing.len() != dims.ndim() {
        return Err(Error::DimMismatch(format!(
            "spacing has {} components for a {}-axis grid",
            spacing.len(),
            dims.ndim()
        )));
    }
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "spacing must be positive and finite, got {spacing:?}"
        )));
    }
    Ok(())
}

/// Scalar intensity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    dims: Dims,
    spacing: Vec<f64>,
    data: Vec<f32>,
}

impl Image {
    pub fn new(dims: Dims, spacing: Vec<f64>, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "image {dims} needs {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        check_spacing(&dims, &spacing)?;
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    /// Image with unit spacing.
    pub fn with_unit_spacing(dims: Dims, data: Vec<f32>) -> Result<Self> {
        Self::new(dims, vec![1.0; dims.ndim()], data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Binary region on a grid. `area` is cached on construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    dims: Dims,
    bits: Vec<bool>,
    area: usize,
}

impl BinaryMask {
    pub fn new(dims: Dims, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "mask {dims} needs {} voxels, got {}",
                dims.len(),
                bits.len()
            )));
        }
        let area = bits.iter().filter(|&&b| b).count();
        Ok(Self { dims, bits, area })
    }

    pub fn empty(dims: Dims) -> Self {
        Self {
            dims,
            bits: vec![false; dims.len()],
            area: 0,
        }
    }

    /// Mask with the listed voxels set. Coordinates outside the grid are an error.
    pub fn from_voxels<I, C>(dims: Dims, voxels: I) -> Result<Self>
    where
        I: IntoIterator<Item = C>,
        C: AsRef<[usize]>,
    {
        let mut bits = vec![false; dims.len()];
        for v in voxels {
            let v = v.as_ref();
            if v.len() != dims.ndim() || !dims.contains(v) {
                return Err(Error::OutOfBounds(format!("voxel {v:?} outside {dims}")));
            }
            bits[dims.flat(v)] = true;
        }
        Self::new(dims, bits)
    }

    /// Threshold a soft grid: voxels with value `>= threshold` are set.
    pub fn from_soft(dims: Dims, values: &[f64], threshold: f64) -> Result<Self> {
        Self::new(dims, values.iter().map(|&v| v >= threshold).collect())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn area(&self) -> usize {
        self.area
    }

    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    pub fn get(&self, c: &[usize]) -> bool {
        self.bits[self.dims.flat(c)]
    }

    /// Flat indices of set voxels, ascending.
    pub fn true_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn true_coords(&self) -> impl Iterator<Item = Coord> + '_ {
        self.true_indices().map(|i| self.dims.unravel(i))
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<usize> {
        self.dims.ensure_same(&other.dims, "mask intersection")?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    /// Mask as a real-valued grid of 0.0 / 1.0.
    pub fn to_soft(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Per-candidate quality metadata as reported by the segmenter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskMeta {
    #[serde(default)]
    pub predicted_iou: Option<f64>,
    #[serde(default)]
    pub stability_score: Option<f64>,
    #[serde(default)]
    pub source_slice: Option<usize>,
}

/// Candidate masks for one image, all on the same grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskSet {
    masks: Vec<BinaryMask>,
    meta: Vec<MaskMeta>,
}

impl MaskSet {
    pub fn new(masks: Vec<BinaryMask>, meta: Vec<MaskMeta>) -> Result<Self> {
        if masks.len() != meta.len() {
            return Err(Error::InconsistentDims(format!(
                "{} masks but {} metadata records",
                masks.len(),
                meta.len()
            )));
        }
        if let Some(first) = masks.first() {
            for m in &masks[1..] {
                first.dims.ensure_same(&m.dims, "mask set")?;
            }
        }
        Ok(Self { masks, meta })
    }

    /// Masks with empty metadata.
    pub fn from_masks(masks: Vec<BinaryMask>) -> Result<Self> {
        let meta = vec![MaskMeta::default(); masks.len()];
        Self::new(masks, meta)
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn meta(&self) -> &[MaskMeta] {
        &self.meta
    }

    pub fn dims(&self) -> Option<Dims> {
        self.masks.first().map(|m| m.dims)
    }

    pub fn get(&self, i: usize) -> Option<(&BinaryMask, &MaskMeta)> {
        Some((self.masks.get(i)?, self.meta.get(i)?))
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            masks: indices.iter().map(|&i| self.masks[i].clone()).collect(),
            meta: indices.iter().map(|&i| self.meta[i]).collect(),
        }
    }

    pub fn into_parts(self) -> (Vec<BinaryMask>, Vec<MaskMeta>) {
        (self.masks, self.meta)
    }
}

/// C-channel embedding grid, channel-major then row-major spatial.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    grid_dims: Dims,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, grid_dims: Dims, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("feature map needs at least one channel".into()));
        }
        if data.len() != channels * grid_dims.len() {
            return Err(Error::DimMismatch(format!(
                "feature map {channels}x{grid_dims} needs {} values, got {}",
                channels * grid_dims.len(),
                data.len()
            )));
        }
        Ok(Self {
            channels,
            grid_dims,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn grid_dims(&self) -> Dims {
        self.grid_dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.grid_dims.len();
        &self.data[c * n..(c + 1) * n]
    }
}

/// Mean feature vector of a region.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype(Vec<f64>);

impl Prototype {
    pub fn new(vec: Vec<f64>) -> Result<Self> {
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("prototype has non-finite entries".into()));
        }
        Ok(Self(vec))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// One matched region: `moving_index`/`fixed_index` refer to the mask sets
/// the pairing was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiPair {
    pub moving_index: usize,
    pub fixed_index: usize,
    pub moving_mask: BinaryMask,
    pub fixed_mask: BinaryMask,
    pub similarity: f64,
}

/// Registration output: matched region pairs, strongest first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoiPairing {
    pub pairs: Vec<RoiPair>,
    pub epsilon_used: f64,
}

impl RoiPairing {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Grid shared by every mask, or an error if the pairing mixes grids.
    pub fn dims(&self) -> Result<Dims> {
        let first = self.pairs.first().ok_or(Error::EmptyPairing)?;
        let d = first.moving_mask.dims();
        for p in &self.pairs {
            d.ensure_same(&p.moving_mask.dims(), "pairing moving mask")?;
            d.ensure_same(&p.fixed_mask.dims(), "pairing fixed mask")?;
        }
        Ok(d)
    }

    /// Keeps the `k` most similar pairs.
    pub fn top_k(&self, k: usize) -> Self {
        Self {
            pairs: self.pairs.iter().take(k).cloned().collect(),
            epsilon_used: self.epsilon_used,
        }
    }
}

/// Per-voxel displacement in voxel units, stored component-major: all
/// axis-0 components first, then axis 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    dims: Dims,
    data: Vec<f64>,
}

impl DisplacementField {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.ndim() * dims.len()],
        }
    }

    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.ndim() * dims.len() {
            return Err(Error::DimMismatch(format!(
                "displacement field on {dims} needs {} values, got {}",
                dims.ndim() * dims.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("displacement field has non-finite entries".into()));
        }
        Ok(Self { dims, data })
    }

    /// Field with the same displacement everywhere.
    pub fn uniform(dims: Dims, shift: &[f64]) -> Result<Self> {
        if shift.len() != dims.ndim() {
            return Err(Error::DimMismatch("shift length differs from grid rank".into()));
        }
        let n = dims.len();
        let mut data = Vec::with_capacity(n * dims.ndim());
        for &s in shift {
            data.extend(std::iter::repeat(s).take(n));
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.dims.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn vector_at(&self, flat: usize) -> [f64; 3] {
        let n = self.dims.len();
        let mut v = [0.0; 3];
        for (c, slot) in v.iter_mut().enumerate().take(self.dims.ndim()) {
            *slot = self.data[c * n + flat];
        }
        v
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// `y = A x + t` in voxel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    /// Row-major d×d.
    pub matrix: Vec<f64>,
    pub translation: Vec<f64>,
}

impl AffineTransform {
    pub fn new(matrix: Vec<f64>, translation: Vec<f64>) -> Result<Self> {
        let d = translation.len();
        if !(2..=3).contains(&d) || matrix.len() != d * d {
            return Err(Error::DimMismatch(format!(
                "affine needs a {d}x{d} matrix, got {} entries",
                matrix.len()
            )));
        }
        let t = Self {
            matrix,
            translation,
        };
        if t.determinant().abs() <= 1e-12 {
            return Err(Error::InvalidArgument("affine matrix is singular".into()));
        }
        Ok(t)
    }

    pub fn identity(ndim: usize) -> Self {
        Self::translation(&vec![0.0; ndim])
    }

    pub fn translation(t: &[f64]) -> Self {
        let d = t.len();
        let mut matrix = vec![0.0; d * d];
        for i in 0..d {
            matrix[i * d + i] = 1.0;
        }
        Self {
            matrix,
            translation: t.to_vec(),
        }
    }

    /// In-plane rotation by `degrees`. For 3D the rotation acts on the
    /// (y, x) plane and leaves z fixed.
    pub fn rotation(ndim: usize, degrees: f64, t: &[f64]) -> Result<Self> {
        let (s, c) = degrees.to_radians().sin_cos();
        let matrix = match ndim {
            2 => vec![c, -s, s, c],
            3 => vec![1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c],
            _ => return Err(Error::InvalidArgument(format!("rotation in {ndim}D"))),
        };
        Self::new(matrix, t.to_vec())
    }

    pub fn ndim(&self) -> usize {
        self.translation.len()
    }

    pub fn is_identity_matrix(&self) -> bool {
        let d = self.ndim();
        (0..d).all(|i| (0..d).all(|j| self.matrix[i * d + j] == if i == j { 1.0 } else { 0.0 }))
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.matrix;
        match self.ndim() {
            2 => m[0] * m[3] - m[1] * m[2],
            3 => {
                m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                    + m[2] * (m[3] * m[7] - m[4] * m[6])
            }
            _ => 0.0,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.ndim();
        (0..d)
            .map(|i| (0..d).map(|j| self.matrix[i * d + j] * x[j]).sum::<f64>() + self.translation[i])
            .collect()
    }

    /// Applies the transform about `center`: `A (x - c) + c + t`.
    pub fn apply_about(&self, x: &[f64], center: &[f64]) -> Vec<f64> {
        let rel: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
        self.apply(&rel)
            .into_iter()
            .zip(center)
            .map(|(y, c)| y + c)
            .collect()
    }

    pub fn inverse(&self) -> Self {
        let d = self.ndim();
        let m = &self.matrix;
        let det = self.determinant();
        let inv = match d {
            2 => vec![m[3] / det, -m[1] / det, -m[2] / det, m[0] / det],
            _ => {
                let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
                    m[r0 * 3 + c0] * m[r1 * 3 + c1] - m[r0 * 3 + c1] * m[r1 * 3 + c0]
                };
                vec![
                    cof(1, 2, 1, 2) / det,
                    -cof(0, 2, 1, 2) / det,
                    cof(0, 1, 1, 2) / det,
                    -cof(1, 2, 0, 2) / det,
                    cof(0, 2, 0, 2) / det,
                    -cof(0, 1, 0, 2) / det,
                    cof(1, 2, 0, 1) / det,
                    -cof(0, 2, 0, 1) / det,
                    cof(0, 1, 0, 1) / det,
                ]
            }
        };
        let t: Vec<f64> = (0..d)
            .map(|i| -(0..d).map(|j| inv[i * d + j] * self.translation[j]).sum::<f64>())
            .collect();
        Self {
            matrix: inv,
            translation: t,
        }
    }
}

/// Mean physical coordinate of the set voxels.
pub fn mask_centroid(mask: &BinaryMask, spacing: &[f64]) -> Result<Vec<f64>> {
    let dims = mask.dims();
    check_spacing(&dims, spacing)?;
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let nd = dims.ndim();
    let mut sum = [0.0f64; 3];
    for c in mask.true_coords() {
        for a in 0..nd {
            sum[a] += c[a] as f64;
        }
    }
    let n = mask.area() as f64;
    Ok((0..nd).map(|a| sum[a] / n * spacing[a]).collect())
}

/// `|a ∩ b| / min(|a|, |b|)`; zero when either mask is empty.
pub fn overlap_ratio(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let denom = a.area().min(b.area());
    if denom == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / denom as f64)
}
