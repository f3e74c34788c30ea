//! Mask-weighted average pooling of encoder features.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Dims, MAX_NDIM};
use crate::types::{BinaryMask, FeatureMap, Prototype};

/// Weight sums below this mean the mask vanished at feature resolution.
pub const DEGENERATE_WEIGHT: f64 = 1e-12;

/// For each input index along an axis of length `n`, the output cell it falls
/// in when the axis is split into `m` near-equal contiguous blocks.
fn block_assignment(n: usize, m: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut cell = 0;
    for i in 0..n {
        while cell + 1 < m && (cell + 1) * n / m <= i {
            cell += 1;
        }
        out.push(cell);
    }
    out
}

/// Area-averages a mask onto a coarser grid. Each output cell holds the
/// fraction of its block of input voxels that are set; blocks partition the
/// input grid.
pub fn downsample_mask(mask: &BinaryMask, grid_dims: Dims) -> Result<Vec<f64>> {
    let dims = mask.dims();
    if dims.ndim() != grid_dims.ndim()
        || (0..dims.ndim()).any(|a| grid_dims.extent(a) > dims.extent(a))
    {
        return Err(Error::DimMismatch(format!(
            "cannot downsample a {dims} mask onto {grid_dims}"
        )));
    }
    let nd = dims.ndim();
    let blocks: Vec<Vec<usize>> = (0..nd)
        .map(|a| block_assignment(dims.extent(a), grid_dims.extent(a)))
        .collect();

    let mut sums = vec![0.0f64; grid_dims.len()];
    let mut counts = vec![0u32; grid_dims.len()];
    let mut cell = [0usize; MAX_NDIM];
    for (flat, &bit) in mask.bits().iter().enumerate() {
        let c = dims.unravel(flat);
        for a in 0..nd {
            cell[a] = blocks[a][c[a]];
        }
        let k = grid_dims.flat(&cell);
        counts[k] += 1;
        if bit {
            sums[k] += 1.0;
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| s / f64::from(n))
        .collect())
}

/// Weighted mean of the feature vectors under the resized mask.
pub fn compute_prototype(mask: &BinaryMask, features: &FeatureMap) -> Result<Prototype> {
    let weights = downsample_mask(mask, features.grid_dims())?;
    let total: f64 = weights.iter().sum();
    if total < DEGENERATE_WEIGHT {
        return Err(Error::DegenerateMask(total));
    }
    let vec = (0..features.channels())
        .map(|c| {
            let acc: f64 = features
                .channel(c)
                .iter()
                .zip(&weights)
                .filter(|(_, &w)| w != 0.0)
                .map(|(&f, &w)| w * f64::from(f))
                .sum();
            acc / total
        })
        .collect();
    Prototype::new(vec)
}

/// Prototypes for every mask; per-mask failures are returned in place.
pub fn compute_prototypes(masks: &[BinaryMask], features: &FeatureMap) -> Vec<Result<Prototype>> {
    masks
        .par_iter()
        .map(|m| compute_prototype(m, features))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_true_downsamples_to_ones() {
        let dims = Dims::d2(7, 9).unwrap();
        let m = BinaryMask::new(dims, vec![true; 63]).unwrap();
        for g in [[1, 1], [3, 4], [7, 9], [2, 5]] {
            let w = downsample_mask(&m, Dims::new(&g).unwrap()).unwrap();
            assert!(w.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn aligned_quadrant() {
        let dims = Dims::d2(4, 4).unwrap();
        let m = BinaryMask::from_voxels(dims, [[0, 0], [0, 1], [1, 0], [1, 1]]).unwrap();
        let w = downsample_mask(&m, Dims::d2(2, 2).unwrap()).unwrap();
        assert_eq!(w, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn random_mask_matches_cell_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = Dims::d2(16, 16).unwrap();
        let m = BinaryMask::new(dims, (0..256).map(|_| rng.gen_bool(0.4)).collect()).unwrap();
        let w = downsample_mask(&m, Dims::d2(4, 4).unwrap()).unwrap();
        for cy in 0..4 {
            for cx in 0..4 {
                let mut n = 0;
                for y in cy * 4..cy * 4 + 4 {
                    for x in cx * 4..cx * 4 + 4 {
                        n += m.get(&[y, x]) as usize;
                    }
                }
                assert_eq!(w[cy * 4 + cx], n as f64 / 16.0);
            }
        }
    }

    #[test]
    fn uneven_blocks_partition_axis() {
        let b = block_assignment(7, 3);
        assert_eq!(b, vec![0, 0, 1, 1, 2, 2, 2]);
        let b = block_assignment(5, 5);
        assert_eq!(b, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn oversized_grid_rejected() {
        let m = BinaryMask::empty(Dims::d2(4, 4).unwrap());
        assert!(downsample_mask(&m, Dims::d2(5, 4).unwrap()).is_err());
        assert!(downsample_mask(&m, Dims::d3(1, 2, 2).unwrap()).is_err());
    }

    #[test]
    fn constant_features_give_constant_prototype() {
        let dims = Dims::d2(8, 8).unwrap();
        let grid = Dims::d2(4, 4).unwrap();
        let v = [0.25f32, -1.5, 3.0];
        let data: Vec<f32> = v.iter().flat_map(|&c| std::iter::repeat(c).take(16)).collect();
        let f = FeatureMap::new(3, grid, data).unwrap();
        let m = BinaryMask::from_voxels(dims, [[1, 1], [5, 6], [7, 7]]).unwrap();
        let p = compute_prototype(&m, &f).unwrap();
        for (a, b) in p.as_slice().iter().zip(v) {
            assert!((a - f64::from(b)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_cell_mask_returns_that_cell() {
        let dims = Dims::d2(8, 8).unwrap();
        let grid = Dims::d2(4, 4).unwrap();
        let data: Vec<f32> = (0..32).map(|i| i as f32).collect();
        let f = FeatureMap::new(2, grid, data).unwrap();
        // cell (1, 2) covers voxels y in 2..4, x in 4..6
        let m = BinaryMask::from_voxels(dims, [[2, 4], [3, 5]]).unwrap();
        let p = compute_prototype(&m, &f).unwrap();
        assert_eq!(p.as_slice(), &[6.0, 22.0]);
    }

    #[test]
    fn empty_mask_is_degenerate() {
        let f = FeatureMap::new(1, Dims::d2(2, 2).unwrap(), vec![1.0; 4]).unwrap();
        let m = BinaryMask::empty(Dims::d2(4, 4).unwrap());
        assert!(matches!(compute_prototype(&m, &f), Err(Error::DegenerateMask(_))));
    }

    #[test]
    fn prototype_depends_only_on_voxel_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = Dims::d2(12, 12).unwrap();
        let f = FeatureMap::new(
            3,
            Dims::d2(6, 6).unwrap(),
            (0..108).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let mut voxels: Vec<[usize; 2]> =
            (0..30).map(|_| [rng.gen_range(0..12), rng.gen_range(0..12)]).collect();
        let a = compute_prototype(&BinaryMask::from_voxels(dims, voxels.iter()).unwrap(), &f).unwrap();
        voxels.reverse();
        voxels.rotate_left(7);
        let b = compute_prototype(&BinaryMask::from_voxels(dims, voxels.iter()).unwrap(), &f).unwrap();
        assert_eq!(a, b);
    }
}
