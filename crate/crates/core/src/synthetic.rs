//! Ground-truth-known registration cases: rasterized shapes under an affine
//! transform, with mock encoder features.
//!
//! Every shape gets its own unit feature vector (and the background another),
//! drawn from a seeded random orthonormal basis, so matching correctness is
//! exact at zero noise.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Coord, Dims};
use crate::interchange::{write_case, Case, Role};
use crate::roi::prototype::downsample_mask;
use crate::types::{mask_centroid, AffineTransform, BinaryMask, FeatureMap, Image, MaskSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    /// Disc in 2D, sphere in 3D.
    Ball,
    Box,
    /// Ellipse in 2D, ellipsoid in 3D.
    Ellipsoid,
}

/// Axis-aligned shape in voxel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Ball { center: Vec<f64>, radius: f64 },
    Box { center: Vec<f64>, half_extents: Vec<f64> },
    Ellipsoid { center: Vec<f64>, semi_axes: Vec<f64> },
}

impl Shape {
    pub fn center(&self) -> &[f64] {
        match self {
            Shape::Ball { center, .. } | Shape::Box { center, .. } | Shape::Ellipsoid { center, .. } => center,
        }
    }

    /// Radius of a ball around the center containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Ball { radius, .. } => *radius,
            Shape::Box { half_extents, .. } => half_extents.iter().map(|h| h * h).sum::<f64>().sqrt(),
            Shape::Ellipsoid { semi_axes, .. } => semi_axes.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            Shape::Ball { center, radius } => {
                let d2: f64 = p.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                d2 <= radius * radius
            }
            Shape::Box { center, half_extents } => p
                .iter()
                .zip(center)
                .zip(half_extents)
                .all(|((a, c), h)| (a - c).abs() <= *h),
            Shape::Ellipsoid { center, semi_axes } => {
                let s: f64 = p
                    .iter()
                    .zip(center)
                    .zip(semi_axes)
                    .map(|((a, c), r)| ((a - c) / r).powi(2))
                    .sum();
                s <= 1.0
            }
        }
    }

    fn params_valid(&self, ndim: usize) -> bool {
        let (center, sizes): (&[f64], Vec<f64>) = match self {
            Shape::Ball { center, radius } => (center, vec![*radius]),
            Shape::Box { center, half_extents } => (center, half_extents.clone()),
            Shape::Ellipsoid { center, semi_axes } => (center, semi_axes.clone()),
        };
        let sizes_ok = match self {
            Shape::Ball { .. } => sizes.len() == 1,
            _ => sizes.len() == ndim,
        };
        center.len() == ndim && sizes_ok && sizes.iter().all(|s| *s > 0.0 && s.is_finite())
    }
}

fn coord_f64(c: &Coord, nd: usize) -> Vec<f64> {
    (0..nd).map(|a| c[a] as f64).collect()
}

/// Inside-test rasterization at voxel centers. The shape center must lie in
/// the grid.
pub fn rasterize_shape(shape: &Shape, dims: Dims) -> Result<BinaryMask> {
    let nd = dims.ndim();
    if !shape.params_valid(nd) {
        return Err(Error::OutOfBounds(format!("malformed shape {shape:?} for {dims}")));
    }
    let inside_grid = shape
        .center()
        .iter()
        .enumerate()
        .all(|(a, &c)| c >= -0.5 && c <= dims.extent(a) as f64 - 0.5);
    if !inside_grid {
        return Err(Error::OutOfBounds(format!("shape center {:?} outside {dims}", shape.center())));
    }
    let bits = (0..dims.len())
        .map(|i| shape.contains(&coord_f64(&dims.unravel(i), nd)))
        .collect();
    BinaryMask::new(dims, bits)
}

/// Rasterizes the image of `shape` under `y = A (x - c) + c + t`.
fn rasterize_transformed(shape: &Shape, dims: Dims, transform: &AffineTransform, center: &[f64]) -> Result<BinaryMask> {
    let nd = dims.ndim();
    let inv = transform.inverse();
    let bits = (0..dims.len())
        .map(|i| shape.contains(&inv.apply_about(&coord_f64(&dims.unravel(i), nd), center)))
        .collect();
    BinaryMask::new(dims, bits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dims: Dims,
    pub spacing: Vec<f64>,
    pub num_shapes: usize,
    pub shape_kinds: Vec<ShapeKind>,
    /// Applied about the grid center.
    pub transform: AffineTransform,
    pub feature_channels: usize,
    /// Feature grid is the image grid divided by this, per axis.
    pub feature_stride: usize,
    pub feature_noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Shapes of the given kinds translated by `t` (voxel units, axis order).
    pub fn translated(dims: Dims, num_shapes: usize, t: &[f64], seed: u64) -> Self {
        Self {
            dims,
            spacing: vec![1.0; dims.ndim()],
            num_shapes,
            shape_kinds: vec![ShapeKind::Ball],
            transform: AffineTransform::translation(t),
            feature_channels: num_shapes + 2,
            feature_stride: 1,
            feature_noise_sigma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nd = self.dims.ndim();
        let fail = |m: String| Err(Error::InvalidArgument(m));
        if self.num_shapes == 0 {
            return fail("need at least one shape".into());
        }
        if self.shape_kinds.is_empty() {
            return fail("need at least one shape kind".into());
        }
        if self.transform.ndim() != nd || self.spacing.len() != nd {
            return fail(format!("transform/spacing rank differs from {nd}D grid"));
        }
        if self.feature_channels < self.num_shapes + 1 {
            return fail(format!(
                "{} feature channels cannot hold {} shape vectors plus background",
                self.feature_channels, self.num_shapes
            ));
        }
        if self.feature_stride == 0 || !(self.feature_noise_sigma >= 0.0) {
            return fail("feature stride must be positive and noise non-negative".into());
        }
        Ok(())
    }

    pub fn feature_dims(&self) -> Result<Dims> {
        let ext: Vec<usize> = self
            .dims
            .as_slice()
            .iter()
            .map(|&e| (e / self.feature_stride).max(1))
            .collect();
        Dims::new(&ext)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `pair_permutation[i]` is the fixed mask index matching moving mask `i`.
    pub pair_permutation: Vec<usize>,
    pub transform: AffineTransform,
    pub transform_center: Vec<f64>,
    /// Physical centroids, indexed by moving mask order.
    pub moving_centroids: Vec<Vec<f64>>,
    /// Physical centroids of the partner fixed masks, same order.
    pub fixed_centroids: Vec<Vec<f64>>,
    pub shapes: Vec<Shape>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub moving: Case,
    pub fixed: Case,
    pub truth: GroundTruth,
}

const PLACEMENT_ATTEMPTS: usize = 2000;
const SHAPE_GAP: f64 = 2.0;

/// Size range keeping areas inside the default area filter.
fn random_shape(kind: ShapeKind, center: Vec<f64>, nd: usize, rng: &mut ChaCha8Rng) -> Shape {
    let two_d = nd == 2;
    match kind {
        ShapeKind::Ball => Shape::Ball {
            center,
            radius: if two_d { rng.gen_range(8.5..11.5) } else { rng.gen_range(4.0..5.5) },
        },
        ShapeKind::Box => Shape::Box {
            center,
            half_extents: (0..nd)
                .map(|_| if two_d { rng.gen_range(7.0..10.0) } else { rng.gen_range(3.0..4.0) })
                .collect(),
        },
        ShapeKind::Ellipsoid => loop {
            let axes: Vec<f64> = (0..nd)
                .map(|_| if two_d { rng.gen_range(8.0..13.0) } else { rng.gen_range(3.5..6.0) })
                .collect();
            let prod: f64 = axes.iter().product();
            if prod >= if two_d { 72.0 } else { 60.0 } {
                break Shape::Ellipsoid { center, semi_axes: axes };
            }
        },
    }
}

/// Largest singular value of a small square matrix (power iteration on AᵀA).
fn spectral_norm(t: &AffineTransform) -> f64 {
    let d = t.ndim();
    let m = &t.matrix;
    let mut v = vec![1.0; d];
    let mut sigma2 = 0.0;
    for _ in 0..100 {
        let av: Vec<f64> = (0..d).map(|i| (0..d).map(|j| m[i * d + j] * v[j]).sum()).collect();
        let atav: Vec<f64> = (0..d).map(|j| (0..d).map(|i| m[i * d + j] * av[i]).sum()).collect();
        let norm = atav.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        sigma2 = v.iter().zip(&atav).map(|(a, b)| a * b).sum::<f64>() / v.iter().map(|x| x * x).sum::<f64>();
        v = atav.into_iter().map(|x| x / norm).collect();
    }
    sigma2.sqrt()
}

fn place_shapes(spec: &SyntheticSpec, center: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<Shape>> {
    let nd = spec.dims.ndim();
    let stretch = spectral_norm(&spec.transform).max(1.0);
    let fits = |p: &[f64], r: f64| {
        (0..nd).all(|a| p[a] - r >= 1.0 && p[a] + r <= spec.dims.extent(a) as f64 - 2.0)
    };
    let mut shapes: Vec<Shape> = Vec::with_capacity(spec.num_shapes);
    for s in 0..spec.num_shapes {
        let kind = *spec.shape_kinds.choose(rng).expect("validated non-empty");
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let c: Vec<f64> = (0..nd)
                .map(|a| rng.gen_range(0.0..spec.dims.extent(a) as f64 - 1.0))
                .collect();
            let shape = random_shape(kind, c.clone(), nd, rng);
            let r = shape.bounding_radius();
            let fc = spec.transform.apply_about(&c, center);
            if !fits(&c, r) || !fits(&fc, r * stretch) {
                continue;
            }
            let clear = shapes.iter().all(|o| {
                let oc = o.center();
                let ro = o.bounding_radius();
                let d: f64 = c.iter().zip(oc).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let ofc = spec.transform.apply_about(oc, center);
                let fd: f64 = fc.iter().zip(&ofc).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                d >= r + ro + SHAPE_GAP && fd >= stretch * (r + ro) + SHAPE_GAP
            });
            if clear {
                placed = Some(shape);
                break;
            }
        }
        match placed {
            Some(sh) => shapes.push(sh),
            None => {
                return Err(Error::ShapePlacementFailure {
                    shape: s,
                    attempts: PLACEMENT_ATTEMPTS,
                })
            }
        }
    }
    Ok(shapes)
}

/// Random orthonormal basis (rows), via Gram-Schmidt on Gaussian vectors.
fn orthonormal_basis(dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Feature map where each cell carries the vector of the shape covering
/// most of it (more than half), else the background vector, plus noise.
fn mock_features(
    spec: &SyntheticSpec,
    masks_by_shape: &[BinaryMask],
    vectors: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<FeatureMap> {
    let fdims = spec.feature_dims()?;
    let cells = fdims.len();
    let coverage: Vec<Vec<f64>> = masks_by_shape
        .iter()
        .map(|m| downsample_mask(m, fdims))
        .collect::<Result<_>>()?;
    let background = &vectors[spec.num_shapes];
    let channels = spec.feature_channels;
    let noise = Normal::new(0.0, spec.feature_noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut data = vec![0.0f32; channels * cells];
    for cell in 0..cells {
        let (best, frac) = coverage
            .iter()
            .enumerate()
            .map(|(s, cov)| (s, cov[cell]))
            .fold((usize::MAX, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        let v = if frac > 0.5 { &vectors[best] } else { background };
        for c in 0..channels {
            let n = if spec.feature_noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            data[c * cells + cell] = (v[c] + n) as f32;
        }
    }
    FeatureMap::new(channels, fdims, data)
}

fn paint_image(spec: &SyntheticSpec, masks_by_shape: &[BinaryMask]) -> Result<Image> {
    let mut data = vec![0.0f32; spec.dims.len()];
    for (s, m) in masks_by_shape.iter().enumerate() {
        let value = 0.2 + 0.8 * (s + 1) as f32 / spec.num_shapes as f32;
        for i in m.true_indices() {
            data[i] = value;
        }
    }
    Image::new(spec.dims, spec.spacing.clone(), data)
}

/// Builds a moving/fixed case pair with known correspondence.
pub fn generate_case(spec: &SyntheticSpec) -> Result<SyntheticCase> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nd = spec.dims.ndim();
    let center: Vec<f64> = (0..nd).map(|a| (spec.dims.extent(a) as f64 - 1.0) / 2.0).collect();

    let shapes = place_shapes(spec, &center, &mut rng)?;
    let moving_masks: Vec<BinaryMask> = shapes
        .iter()
        .map(|s| rasterize_shape(s, spec.dims))
        .collect::<Result<_>>()?;
    let fixed_masks: Vec<BinaryMask> = shapes
        .iter()
        .map(|s| rasterize_transformed(s, spec.dims, &spec.transform, &center))
        .collect::<Result<_>>()?;
    if let Some(s) = fixed_masks.iter().position(BinaryMask::is_empty) {
        return Err(Error::ShapePlacementFailure { shape: s, attempts: 1 });
    }

    let vectors = orthonormal_basis(spec.feature_channels, spec.num_shapes + 1, &mut rng);

    let mut order_x: Vec<usize> = (0..spec.num_shapes).collect();
    let mut order_y = order_x.clone();
    order_x.shuffle(&mut rng);
    order_y.shuffle(&mut rng);
    let pair_permutation: Vec<usize> = order_x
        .iter()
        .map(|s| order_y.iter().position(|t| t == s).expect("same shape set"))
        .collect();

    let features_x = mock_features(spec, &moving_masks, &vectors, &mut rng)?;
    let features_y = mock_features(spec, &fixed_masks, &vectors, &mut rng)?;

    let moving = Case {
        role: Role::Moving,
        image: paint_image(spec, &moving_masks)?,
        features: features_x,
        masks: MaskSet::from_masks(order_x.iter().map(|&s| moving_masks[s].clone()).collect())?,
    };
    let fixed = Case {
        role: Role::Fixed,
        image: paint_image(spec, &fixed_masks)?,
        features: features_y,
        masks: MaskSet::from_masks(order_y.iter().map(|&s| fixed_masks[s].clone()).collect())?,
    };

    let moving_centroids = order_x
        .iter()
        .map(|&s| mask_centroid(&moving_masks[s], &spec.spacing))
        .collect::<Result<_>>()?;
    let fixed_centroids = order_x
        .iter()
        .map(|&s| mask_centroid(&fixed_masks[s], &spec.spacing))
        .collect::<Result<_>>()?;

    Ok(SyntheticCase {
        moving,
        fixed,
        truth: GroundTruth {
            pair_permutation,
            transform: spec.transform.clone(),
            transform_center: center,
            moving_centroids,
            fixed_centroids,
            shapes: order_x.iter().map(|&s| shapes[s].clone()).collect(),
        },
    })
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// Writes `out/moving`, `out/fixed` and `out/ground_truth.json`.
pub fn write_synthetic(case: &SyntheticCase, out: &Path) -> Result<()> {
    write_case(&case.moving, &out.join("moving"))?;
    write_case(&case.fixed, &out.join("fixed"))?;
    let path = out.join(GROUND_TRUTH_FILE);
    let mut text = serde_json::to_string_pretty(&case.truth).expect("ground truth serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_ground_truth(out: &Path) -> Result<GroundTruth> {
    let path = out.join(GROUND_TRUTH_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::ManifestParse {
        path,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_voxel_disc_is_single_voxel() {
        let dims = Dims::d2(9, 9).unwrap();
        let m = rasterize_shape(&Shape::Ball { center: vec![4.0, 3.0], radius: 0.5 }, dims).unwrap();
        assert_eq!(m.area(), 1);
        assert!(m.get(&[4, 3]));
    }

    #[test]
    fn box_area() {
        let dims = Dims::d2(10, 10).unwrap();
        let m = rasterize_shape(
            &Shape::Box { center: vec![3.0, 4.0], half_extents: vec![1.0, 1.0] },
            dims,
        )
        .unwrap();
        assert_eq!(m.area(), 9);
        assert!(m.get(&[2, 3]) && m.get(&[4, 5]) && !m.get(&[5, 5]));
    }

    #[test]
    fn sphere_matches_loop_count() {
        let dims = Dims::d3(32, 32, 32).unwrap();
        let c = [15.0, 16.0, 15.5];
        let m = rasterize_shape(&Shape::Ball { center: c.to_vec(), radius: 6.0 }, dims).unwrap();
        let mut count = 0;
        for z in 0..32 {
            for y in 0..32 {
                for x in 0..32 {
                    let d = (z as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (x as f64 - c[2]).powi(2);
                    if d <= 36.0 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(m.area(), count);
    }

    #[test]
    fn center_outside_grid_rejected() {
        let dims = Dims::d2(10, 10).unwrap();
        let r = rasterize_shape(&Shape::Ball { center: vec![12.0, 3.0], radius: 2.0 }, dims);
        assert!(matches!(r, Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = orthonormal_basis(6, 5, &mut rng);
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = b[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SyntheticSpec::translated(Dims::d2(64, 64).unwrap(), 3, &[-2.0, 4.0], 7);
        let a = generate_case(&spec).unwrap();
        let b = generate_case(&spec).unwrap();
        assert_eq!(a.moving, b.moving);
        assert_eq!(a.fixed, b.fixed);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn translation_moves_centroids_exactly() {
        let mut spec = SyntheticSpec::translated(Dims::d2(64, 64).unwrap(), 3, &[-2.0, 4.0], 11);
        spec.spacing = vec![0.5, 2.0];
        let case = generate_case(&spec).unwrap();
        for (m, f) in case.truth.moving_centroids.iter().zip(&case.truth.fixed_centroids) {
            assert!((f[0] - m[0] - (-2.0 * 0.5)).abs() < 1e-9);
            assert!((f[1] - m[1] - 4.0 * 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn too_many_shapes_fail_placement() {
        let spec = SyntheticSpec::translated(Dims::d2(32, 32).unwrap(), 6, &[0.0, 0.0], 1);
        assert!(matches!(generate_case(&spec), Err(Error::ShapePlacementFailure { .. })));
    }
}
