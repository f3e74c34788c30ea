//! Alignment and smoothness terms of the dense-field objective.
//!
//! Per pair, the alignment term is `0.5·mse + 0.5·dice_loss` between the
//! moving mask and the fixed mask resampled into moving space. Pair terms
//! are summed and `lambda · smoothness` is added on top.

use rayon::prelude::*;
use serde::Serialize;

use crate::ddf::warp::warp_grid_with_gradient;
use crate::error::{Error, Result};
use crate::grid::Dims;
use crate::types::DisplacementField;

/// Components of one objective evaluation.
///
/// `roi_mse` and `roi_dice` already carry the 0.5 weights, so
/// `total == roi_mse + roi_dice + lambda * smoothness`. `per_pair` holds the
/// unweighted `(mse, dice_loss)` of each pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub roi_mse: f64,
    pub roi_dice: f64,
    pub smoothness: f64,
    pub per_pair: Vec<(f64, f64)>,
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(format!("grids of {} and {} voxels", a.len(), b.len())));
    }
    Ok(())
}

/// Mean squared difference and soft Dice loss
/// `1 - (2Σab + s) / (Σa² + Σb² + s)`.
pub fn roi_loss(fixed_warped: &[f64], moving: &[f64], dice_smooth: f64) -> Result<(f64, f64)> {
    same_len(fixed_warped, moving)?;
    let n = moving.len().max(1) as f64;
    let (mut sq, mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0, 0.0);
    for (&b, &a) in fixed_warped.iter().zip(moving) {
        sq += (b - a) * (b - a);
        ab += a * b;
        aa += a * a;
        bb += b * b;
    }
    let dice = 1.0 - (2.0 * ab + dice_smooth) / (aa + bb + dice_smooth);
    Ok((sq / n, dice))
}

/// As [`roi_loss`], plus the gradient of `0.5·mse + 0.5·dice` with respect
/// to each warped voxel.
pub fn roi_loss_with_gradient(
    fixed_warped: &[f64],
    moving: &[f64],
    dice_smooth: f64,
) -> Result<(f64, f64, Vec<f64>)> {
    same_len(fixed_warped, moving)?;
    let n = moving.len().max(1) as f64;
    let (mut ab, mut q) = (0.0, 0.0);
    for (&b, &a) in fixed_warped.iter().zip(moving) {
        ab += a * b;
        q += a * a + b * b;
    }
    let num = 2.0 * ab + dice_smooth;
    let den = q + dice_smooth;
    let (mse, dice) = roi_loss(fixed_warped, moving, dice_smooth)?;
    let grad = fixed_warped
        .iter()
        .zip(moving)
        .map(|(&b, &a)| {
            let d_mse = 2.0 * (b - a) / n;
            let d_dice = -(2.0 * a * den - num * 2.0 * b) / (den * den);
            0.5 * d_mse + 0.5 * d_dice
        })
        .collect();
    Ok((mse, dice, grad))
}

fn smoothness_terms(dims: &Dims) -> Result<usize> {
    if dims.as_slice().iter().any(|&e| e < 2) {
        return Err(Error::GridTooSmall(dims.as_slice().to_vec()));
    }
    let n = dims.len();
    let per_component: usize = dims
        .as_slice()
        .iter()
        .map(|&e| n / e * (e - 1))
        .sum();
    Ok(per_component * dims.ndim())
}

/// Mean squared forward difference over components, axes and voxels that
/// have a forward neighbour.
pub fn smoothness_loss(ddf: &DisplacementField) -> Result<f64> {
    Ok(smoothness_with_gradient(ddf, false)?.0)
}

pub(crate) fn smoothness_with_gradient(
    ddf: &DisplacementField,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let dims = ddf.dims();
    let count = smoothness_terms(&dims)? as f64;
    let n = dims.len();
    let strides = dims.strides();
    let mut sum = 0.0;
    let mut grad = if want_grad { vec![0.0; ddf.data().len()] } else { Vec::new() };
    for c in 0..dims.ndim() {
        let comp = ddf.component(c);
        for axis in 0..dims.ndim() {
            let s = strides[axis];
            let ext = dims.extent(axis);
            for i in 0..n {
                if (i / s) % ext + 1 >= ext {
                    continue;
                }
                let d = comp[i + s] - comp[i];
                sum += d * d;
                if want_grad {
                    let g = 2.0 * d / count;
                    grad[c * n + i + s] += g;
                    grad[c * n + i] -= g;
                }
            }
        }
    }
    Ok((sum / count, grad))
}

/// Soft masks for one pair: moving grid and fixed grid (the one resampled).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPair {
    pub moving: Vec<f64>,
    pub fixed: Vec<f64>,
}

/// Objective value and, component-major, its gradient with respect to the field.
pub fn objective(
    pairs: &[SoftPair],
    ddf: &DisplacementField,
    lambda: f64,
    dice_smooth: f64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let dims = ddf.dims();
    let n = dims.len();
    let nd = dims.ndim();

    let per: Vec<(f64, f64, Vec<f64>)> = pairs
        .par_iter()
        .map(|p| -> Result<(f64, f64, Vec<f64>)> {
            let (warped, dwarp) = warp_grid_with_gradient(&p.fixed, dims, ddf)?;
            let (mse, dice, dloss) = roi_loss_with_gradient(&warped, &p.moving, dice_smooth)?;
            let mut g = vec![0.0; nd * n];
            for c in 0..nd {
                for i in 0..n {
                    g[c * n + i] = dloss[i] * dwarp[c * n + i];
                }
            }
            Ok((mse, dice, g))
        })
        .collect::<Result<_>>()?;

    let (smooth, sgrad) = smoothness_with_gradient(ddf, true)?;
    let mut grad: Vec<f64> = sgrad.into_iter().map(|g| lambda * g).collect();
    let mut roi_mse = 0.0;
    let mut roi_dice = 0.0;
    let mut per_pair = Vec::with_capacity(per.len());
    for (mse, dice, g) in per {
        roi_mse += 0.5 * mse;
        roi_dice += 0.5 * dice;
        per_pair.push((mse, dice));
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    let breakdown = LossBreakdown {
        total: roi_mse + roi_dice + lambda * smooth,
        roi_mse,
        roi_dice,
        smoothness: smooth,
        per_pair,
    };
    Ok((breakdown, grad))
}
