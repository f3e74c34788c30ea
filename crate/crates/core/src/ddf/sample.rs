//! Conversion between a dense field and single-voxel ROI pairs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Dims;
use crate::types::{mask_centroid, BinaryMask, DisplacementField, RoiPair, RoiPairing};

fn round_inside(dims: &Dims, p: &[f64]) -> Option<Vec<usize>> {
    let mut out = Vec::with_capacity(dims.ndim());
    for (a, &v) in p.iter().enumerate().take(dims.ndim()) {
        let r = v.round();
        if !(r >= 0.0 && r < dims.extent(a) as f64) {
            return None;
        }
        out.push(r as usize);
    }
    Some(out)
}

/// Single-voxel pairs sampled from a field.
#[derive(Debug, Clone)]
pub struct SampledPairs {
    pub pairing: RoiPairing,
    /// Input indices of points whose displaced position left the grid.
    pub skipped: Vec<usize>,
}

/// For every sample point `x` emits the pair
/// `(voxel round(x), voxel round(x + ddf(round(x))))`. Pair indices
/// refer to the input point list.
pub fn ddf_to_roi_pairs(ddf: &DisplacementField, points: &[Vec<f64>]) -> Result<SampledPairs> {
    let dims = ddf.dims();
    let nd = dims.ndim();
    let mut pairs = Vec::with_capacity(points.len());
    let mut skipped = Vec::new();
    for (k, p) in points.iter().enumerate() {
        if p.len() != nd {
            return Err(Error::DimMismatch(format!(
                "point {p:?} has {} coordinates for a {nd}-axis grid",
                p.len()
            )));
        }
        let src = round_inside(&dims, p).ok_or_else(|| Error::PointOutOfRange(p.clone()))?;
        let u = ddf.vector_at(dims.flat(&src));
        let displaced: Vec<f64> = (0..nd).map(|a| src[a] as f64 + u[a]).collect();
        let Some(dst) = round_inside(&dims, &displaced) else {
            log::debug!("{}", Error::DisplacedPointOutOfRange(displaced));
            skipped.push(k);
            continue;
        };
        pairs.push(RoiPair {
            moving_index: k,
            fixed_index: k,
            moving_mask: BinaryMask::from_voxels(dims, [&src])?,
            fixed_mask: BinaryMask::from_voxels(dims, [&dst])?,
            similarity: 1.0,
        });
    }
    if !skipped.is_empty() {
        log::warn!("{} of {} points were displaced outside the grid and skipped", skipped.len(), points.len());
    }
    Ok(SampledPairs {
        pairing: RoiPairing {
            pairs,
            epsilon_used: 0.0,
        },
        skipped,
    })
}

/// Every voxel of the grid, as coordinates.
pub fn all_voxels(dims: Dims) -> Vec<Vec<f64>> {
    (0..dims.len())
        .map(|i| {
            let c = dims.unravel(i);
            (0..dims.ndim()).map(|a| c[a] as f64).collect()
        })
        .collect()
}

/// Rebuilds a field from ROI pairs: at the (rounded) centroid of each moving
/// region the displacement is the centroid difference. Voxels without a
/// pair stay zero; the mask reports which voxels were covered.
pub fn reconstruct_ddf(pairing: &RoiPairing, dims: Dims) -> Result<(DisplacementField, Vec<bool>)> {
    let nd = dims.ndim();
    let n = dims.len();
    let unit = vec![1.0; nd];
    let mut data = vec![0.0; nd * n];
    let mut covered = vec![false; n];
    for p in &pairing.pairs {
        dims.ensure_same(&p.moving_mask.dims(), "pair mask")?;
        let cx = mask_centroid(&p.moving_mask, &unit)?;
        let cy = mask_centroid(&p.fixed_mask, &unit)?;
        let at = round_inside(&dims, &cx).ok_or_else(|| Error::PointOutOfRange(cx.clone()))?;
        let flat = dims.flat(&at);
        covered[flat] = true;
        for a in 0..nd {
            data[a * n + flat] = cy[a] - cx[a];
        }
    }
    Ok((DisplacementField::new(dims, data)?, covered))
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundtripReport {
    pub num_points: usize,
    pub skipped: usize,
    pub integer_field: bool,
    /// Largest per-component difference over reconstructed voxels.
    pub max_abs_error: f64,
}

/// Samples every voxel into single-voxel pairs and rebuilds the field.
pub fn roundtrip(ddf: &DisplacementField) -> Result<RoundtripReport> {
    let dims = ddf.dims();
    let sampled = ddf_to_roi_pairs(ddf, &all_voxels(dims))?;
    let (rebuilt, covered) = reconstruct_ddf(&sampled.pairing, dims)?;
    let n = dims.len();
    let mut max_abs_error = 0.0f64;
    for c in 0..dims.ndim() {
        for i in (0..n).filter(|&i| covered[i]) {
            let e = (rebuilt.data()[c * n + i] - ddf.data()[c * n + i]).abs();
            max_abs_error = max_abs_error.max(e);
        }
    }
    Ok(RoundtripReport {
        num_points: n,
        skipped: sampled.skipped.len(),
        integer_field: ddf.data().iter().all(|v| v.fract() == 0.0),
        max_abs_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_pairs_coincide() {
        let dims = Dims::d2(5, 5).unwrap();
        let s = ddf_to_roi_pairs(&DisplacementField::zeros(dims), &all_voxels(dims)).unwrap();
        assert_eq!(s.pairing.len(), 25);
        for p in &s.pairing.pairs {
            assert_eq!(p.moving_mask, p.fixed_mask);
        }
    }

    #[test]
    fn uniform_shift_moves_point() {
        let dims = Dims::d2(6, 6).unwrap();
        let along0 = DisplacementField::uniform(dims, &[2.0, 0.0]).unwrap();
        let s = ddf_to_roi_pairs(&along0, &[vec![1.0, 1.0]]).unwrap();
        assert!(s.pairing.pairs[0].fixed_mask.get(&[3, 1]));
        let along_x = DisplacementField::uniform(dims, &[0.0, 2.0]).unwrap();
        let s = ddf_to_roi_pairs(&along_x, &[vec![1.0, 1.0]]).unwrap();
        assert!(s.pairing.pairs[0].moving_mask.get(&[1, 1]));
        assert!(s.pairing.pairs[0].fixed_mask.get(&[1, 3]));
    }

    #[test]
    fn out_of_range_points() {
        let dims = Dims::d2(4, 4).unwrap();
        let ddf = DisplacementField::uniform(dims, &[0.0, 3.0]).unwrap();
        assert!(matches!(
            ddf_to_roi_pairs(&ddf, &[vec![4.0, 0.0]]),
            Err(Error::PointOutOfRange(_))
        ));
        let s = ddf_to_roi_pairs(&ddf, &[vec![0.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(s.pairing.len(), 1);
        assert_eq!(s.skipped, vec![1]);
    }
}
