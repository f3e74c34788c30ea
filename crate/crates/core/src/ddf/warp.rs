//! Multilinear resampling through a displacement field, with zero padding.

use crate::error::{Error, Result};
use crate::grid::{Dims, MAX_NDIM};
use crate::types::{BinaryMask, DisplacementField};

/// Interpolated value at continuous position `p` and its partial derivatives
/// with respect to each coordinate. Samples outside the grid read as zero.
#[inline]
pub(crate) fn sample_with_gradient(values: &[f64], dims: &Dims, p: &[f64; MAX_NDIM]) -> (f64, [f64; MAX_NDIM]) {
    let nd = dims.ndim();
    let strides = dims.strides();
    let mut base = [0i64; MAX_NDIM];
    let mut frac = [0.0f64; MAX_NDIM];
    for a in 0..nd {
        // no corner on the grid (also catches NaN and huge values)
        if !(p[a] > -1.0 && p[a] < dims.extent(a) as f64) {
            return (0.0, [0.0; MAX_NDIM]);
        }
        let f = p[a].floor();
        base[a] = f as i64;
        frac[a] = p[a] - f;
    }

    let mut value = 0.0;
    let mut grad = [0.0f64; MAX_NDIM];
    'corner: for corner in 0..(1usize << nd) {
        let mut offset = 0usize;
        let mut w = [0.0f64; MAX_NDIM];
        for a in 0..nd {
            let upper = (corner >> (nd - 1 - a)) & 1 == 1;
            let idx = base[a] + upper as i64;
            if idx < 0 || idx >= dims.extent(a) as i64 {
                continue 'corner;
            }
            offset += idx as usize * strides[a];
            w[a] = if upper { frac[a] } else { 1.0 - frac[a] };
        }
        let v = values[offset];
        if v == 0.0 {
            continue;
        }
        let mut weight = 1.0;
        for &wa in &w[..nd] {
            weight *= wa;
        }
        value += weight * v;
        for a in 0..nd {
            let upper = (corner >> (nd - 1 - a)) & 1 == 1;
            let mut d = if upper { 1.0 } else { -1.0 };
            for (b, &wb) in w[..nd].iter().enumerate() {
                if b != a {
                    d *= wb;
                }
            }
            grad[a] += d * v;
        }
    }
    (value, grad)
}

#[inline]
pub(crate) fn sample(values: &[f64], dims: &Dims, p: &[f64; MAX_NDIM]) -> f64 {
    sample_with_gradient(values, dims, p).0
}

fn check(values: &[f64], dims: Dims, ddf: &DisplacementField) -> Result<()> {
    if values.len() != dims.len() {
        return Err(Error::DimMismatch(format!(
            "grid {dims} needs {} values, got {}",
            dims.len(),
            values.len()
        )));
    }
    dims.ensure_same(&ddf.dims(), "warp grid vs displacement field")
}

#[inline]
fn position(dims: &Dims, ddf: &DisplacementField, flat: usize) -> [f64; MAX_NDIM] {
    let c = dims.unravel(flat);
    let u = ddf.vector_at(flat);
    let mut p = [0.0; MAX_NDIM];
    for a in 0..dims.ndim() {
        p[a] = c[a] as f64 + u[a];
    }
    p
}

/// `out(v) = values(v + ddf(v))`.
pub fn warp_grid(values: &[f64], dims: Dims, ddf: &DisplacementField) -> Result<Vec<f64>> {
    check(values, dims, ddf)?;
    Ok((0..dims.len())
        .map(|i| sample(values, &dims, &position(&dims, ddf, i)))
        .collect())
}

/// Warped grid plus, component-major, `∂out(v)/∂ddf_c(v)`.
pub fn warp_grid_with_gradient(
    values: &[f64],
    dims: Dims,
    ddf: &DisplacementField,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check(values, dims, ddf)?;
    let n = dims.len();
    let nd = dims.ndim();
    let mut out = vec![0.0; n];
    let mut grad = vec![0.0; nd * n];
    for (i, o) in out.iter_mut().enumerate() {
        let (v, g) = sample_with_gradient(values, &dims, &position(&dims, ddf, i));
        *o = v;
        for a in 0..nd {
            grad[a * n + i] = g[a];
        }
    }
    Ok((out, grad))
}

/// Warps a binary mask as a 0/1 real grid; the result lies in [0, 1].
pub fn warp_mask(mask: &BinaryMask, ddf: &DisplacementField) -> Result<Vec<f64>> {
    warp_grid(&mask.to_soft(), mask.dims(), ddf)
}
