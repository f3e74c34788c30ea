//! Assembles 3D candidates from per-slice 2D masks by chaining masks on
//! consecutive slices.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::Dims;
use crate::types::{BinaryMask, MaskMeta, MaskSet};

pub const DEFAULT_MIN_LINK_IOU: f64 = 0.5;

fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let inter = a
        .bits()
        .iter()
        .zip(b.bits())
        .filter(|(&x, &y)| x && y)
        .count();
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Links each 2D mask on slice `z` to its best-IoU mask on slice `z + 1`
/// (when that IoU reaches `min_link_iou` and the target is still unclaimed)
/// and turns every maximal chain into one 3D mask. Metadata is averaged over
/// the chain; `source_slice` is cleared.
pub fn stack_slices_to_3d(
    per_slice: &[(usize, MaskSet)],
    volume_dims: Dims,
    min_link_iou: f64,
) -> Result<MaskSet> {
    let plane = volume_dims.in_plane()?;
    let depth = volume_dims.extent(0);

    let mut slices: BTreeMap<usize, Vec<(&BinaryMask, &MaskMeta)>> = BTreeMap::new();
    for (z, set) in per_slice {
        if *z >= depth {
            return Err(Error::SliceOutOfRange { index: *z, depth });
        }
        if let Some(d) = set.dims() {
            plane.ensure_same(&d, "slice mask")?;
        }
        slices
            .entry(*z)
            .or_default()
            .extend(set.masks().iter().zip(set.meta()));
    }

    // link[(z, i)] = index on slice z + 1
    let mut link: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut claimed: BTreeMap<(usize, usize), bool> = BTreeMap::new();
    for (&z, masks) in &slices {
        let Some(next) = slices.get(&(z + 1)) else {
            continue;
        };
        for (i, (a, _)) in masks.iter().enumerate() {
            let mut best: Option<(usize, f64)> = None;
            for (j, (b, _)) in next.iter().enumerate() {
                let v = iou(a, b);
                if best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            if let Some((j, v)) = best {
                let taken = claimed.get(&(z + 1, j)).copied().unwrap_or(false);
                if v > 0.0 && v >= min_link_iou && !taken {
                    link.insert((z, i), j);
                    claimed.insert((z + 1, j), true);
                }
            }
        }
    }

    let mut masks = Vec::new();
    let mut meta = Vec::new();
    for (&z0, list) in &slices {
        for i0 in 0..list.len() {
            if claimed.contains_key(&(z0, i0)) {
                continue;
            }
            let mut bits = vec![false; volume_dims.len()];
            let mut members: Vec<&MaskMeta> = Vec::new();
            let (mut z, mut i) = (z0, i0);
            loop {
                let (m, q) = slices[&z][i];
                let offset = z * plane.len();
                for idx in m.true_indices() {
                    bits[offset + idx] = true;
                }
                members.push(q);
                match link.get(&(z, i)) {
                    Some(&j) => {
                        z += 1;
                        i = j;
                    }
                    None => break,
                }
            }
            masks.push(BinaryMask::new(volume_dims, bits)?);
            meta.push(MaskMeta {
                predicted_iou: mean_of(members.iter().map(|m| m.predicted_iou)),
                stability_score: mean_of(members.iter().map(|m| m.stability_score)),
                source_slice: None,
            });
        }
    }
    MaskSet::new(masks, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(plane: Dims, cy: f64, cx: f64, r: f64) -> BinaryMask {
        let bits = (0..plane.len())
            .map(|f| {
                let c = plane.unravel(f);
                let (dy, dx) = (c[0] as f64 - cy, c[1] as f64 - cx);
                dy * dy + dx * dx <= r * r
            })
            .collect();
        BinaryMask::new(plane, bits).unwrap()
    }

    #[test]
    fn repeated_circle_forms_one_chain() {
        let plane = Dims::d2(16, 16).unwrap();
        let vol = Dims::d3(5, 16, 16).unwrap();
        let c = disc(plane, 8.0, 8.0, 4.0);
        let per: Vec<(usize, MaskSet)> = (0..5)
            .map(|z| {
                let meta = MaskMeta { predicted_iou: Some(0.9 + 0.01 * z as f64), source_slice: Some(z), ..Default::default() };
                (z, MaskSet::new(vec![c.clone()], vec![meta]).unwrap())
            })
            .collect();
        let out = stack_slices_to_3d(&per, vol, DEFAULT_MIN_LINK_IOU).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.masks()[0].area(), 5 * c.area());
        assert!((out.meta()[0].predicted_iou.unwrap() - 0.92).abs() < 1e-12);
        assert_eq!(out.meta()[0].stability_score, None);
    }

    #[test]
    fn disjoint_shapes_never_merge() {
        let plane = Dims::d2(20, 20).unwrap();
        let vol = Dims::d3(4, 20, 20).unwrap();
        // shape A on even slices left, shape B right; odd slices swap rows
        let per: Vec<(usize, MaskSet)> = (0..4)
            .map(|z| {
                let y = if z % 2 == 0 { 4.0 } else { 15.0 };
                let a = disc(plane, y, 4.0, 2.5);
                let b = disc(plane, 19.0 - y, 15.0, 2.5);
                (z, MaskSet::from_masks(vec![a, b]).unwrap())
            })
            .collect();
        let out = stack_slices_to_3d(&per, vol, 0.1).unwrap();
        assert_eq!(out.len(), 8);
    }

    #[test]
    fn sphere_slices_reassemble_sphere() {
        let (n, r) = (16usize, 5.5f64);
        let vol = Dims::d3(n, n, n).unwrap();
        let plane = vol.in_plane().unwrap();
        let c = 7.5;
        let inside = |z: usize, y: usize, x: usize| {
            let (dz, dy, dx) = (z as f64 - c, y as f64 - c, x as f64 - c);
            dz * dz + dy * dy + dx * dx <= r * r
        };
        let mut per = Vec::new();
        for z in 0..n {
            let bits: Vec<bool> = (0..plane.len())
                .map(|f| {
                    let p = plane.unravel(f);
                    inside(z, p[0], p[1])
                })
                .collect();
            let m = BinaryMask::new(plane, bits).unwrap();
            if !m.is_empty() {
                per.push((z, MaskSet::from_masks(vec![m]).unwrap()));
            }
        }
        let out = stack_slices_to_3d(&per, vol, DEFAULT_MIN_LINK_IOU).unwrap();
        assert_eq!(out.len(), 1);
        let oracle: Vec<bool> = (0..vol.len())
            .map(|f| {
                let p = vol.unravel(f);
                inside(p[0], p[1], p[2])
            })
            .collect();
        assert_eq!(out.masks()[0].bits(), &oracle[..]);
    }

    #[test]
    fn bad_inputs() {
        let vol = Dims::d3(2, 4, 4).unwrap();
        let m = BinaryMask::empty(Dims::d2(4, 4).unwrap());
        let set = MaskSet::from_masks(vec![m]).unwrap();
        assert!(matches!(
            stack_slices_to_3d(&[(2, set.clone())], vol, 0.5),
            Err(Error::SliceOutOfRange { index: 2, depth: 2 })
        ));
        let wrong = MaskSet::from_masks(vec![BinaryMask::empty(Dims::d2(3, 4).unwrap())]).unwrap();
        assert!(matches!(stack_slices_to_3d(&[(0, wrong)], vol, 0.5), Err(Error::DimMismatch(_))));
    }
}
