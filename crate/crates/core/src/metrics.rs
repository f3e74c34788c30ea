//! Dice overlap and centroid-based target registration error.

use serde::{Deserialize, Serialize};

use crate::ddf::warp_mask;
use crate::error::{Error, Result};
use crate::types::{mask_centroid, BinaryMask, DisplacementField, RoiPairing};

/// Threshold applied to warped soft masks before scoring.
pub const BINARIZE_AT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_dice: f64,
    pub per_roi_dice: Vec<f64>,
    /// RMS of the defined centroid distances; `None` when every ROI was dropped.
    pub tre: Option<f64>,
    /// `None` for ROIs whose warped mask came out empty.
    pub per_roi_centroid_dist: Vec<Option<f64>>,
    pub num_rois: usize,
    pub dropped_rois: usize,
}

/// `2|a ∩ b| / (|a| + |b|)`; 1 when both are empty.
pub fn dice_binary(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let total = a.area() + b.area();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

fn centroid_distance(a: &BinaryMask, b: &BinaryMask, spacing: &[f64]) -> Result<f64> {
    let ca = mask_centroid(a, spacing)?;
    let cb = mask_centroid(b, spacing)?;
    Ok(ca
        .iter()
        .zip(&cb)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Root-mean-square distance between paired centroids, in physical units.
pub fn tre_rms(pairs: &[(BinaryMask, BinaryMask)], spacing: &[f64]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyList("no mask pairs for TRE".into()));
    }
    let mut sq = 0.0;
    for (a, b) in pairs {
        let d = centroid_distance(a, b, spacing)?;
        sq += d * d;
    }
    Ok((sq / pairs.len() as f64).sqrt())
}

/// Scores each pair: moving mask against the fixed mask, resampled into
/// moving space through `ddf` when one is given. ROIs that warp to nothing
/// score Dice 0 and are left out of the TRE.
pub fn evaluate(
    pairing: &RoiPairing,
    ddf: Option<&DisplacementField>,
    spacing: &[f64],
) -> Result<EvalReport> {
    if pairing.is_empty() {
        return Err(Error::EmptyPairing);
    }
    let dims = pairing.dims()?;
    if let Some(f) = ddf {
        dims.ensure_same(&f.dims(), "pairing vs displacement field")?;
    }

    let mut per_roi_dice = Vec::with_capacity(pairing.len());
    let mut per_roi_centroid_dist = Vec::with_capacity(pairing.len());
    for p in &pairing.pairs {
        let fixed = match ddf {
            Some(f) => BinaryMask::from_soft(dims, &warp_mask(&p.fixed_mask, f)?, BINARIZE_AT)?,
            None => p.fixed_mask.clone(),
        };
        per_roi_dice.push(dice_binary(&p.moving_mask, &fixed)?);
        if fixed.is_empty() || p.moving_mask.is_empty() {
            log::warn!(
                "ROI pair ({}, {}) has an empty mask after warping; excluded from TRE",
                p.moving_index,
                p.fixed_index
            );
            per_roi_centroid_dist.push(None);
        } else {
            per_roi_centroid_dist.push(Some(centroid_distance(&p.moving_mask, &fixed, spacing)?));
        }
    }

    let defined: Vec<f64> = per_roi_centroid_dist.iter().flatten().copied().collect();
    let tre = (!defined.is_empty())
        .then(|| (defined.iter().map(|d| d * d).sum::<f64>() / defined.len() as f64).sqrt());
    Ok(EvalReport {
        mean_dice: per_roi_dice.iter().sum::<f64>() / per_roi_dice.len() as f64,
        per_roi_dice,
        tre,
        dropped_rois: per_roi_centroid_dist.len() - defined.len(),
        per_roi_centroid_dist,
        num_rois: pairing.len(),
    })
}
