//! On-disk case format shared with the segmenter/exporter.
//!
//! ```text
//! case_dir/
//!   manifest.json   UTF-8, keys sorted
//!   image.raw       little-endian f32, row-major
//!   features.raw    little-endian f32, channel-major then row-major
//!   mask_000.raw    one byte per voxel, 0 or 1
//!   ...
//! ```
//!
//! A 3D case may carry 2D slice masks instead of volume masks; each such
//! mask records its `source_slice` and has the in-plane extent.
//! Displacement fields go to `ddf.raw` (f32, component-major) + `ddf.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Dims;
use crate::types::{BinaryMask, DisplacementField, FeatureMap, Image, MaskMeta, MaskSet, RoiPair, RoiPairing};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGE_FILE: &str = "image.raw";
pub const FEATURE_FILE: &str = "features.raw";
pub const DDF_RAW_FILE: &str = "ddf.raw";
pub const DDF_META_FILE: &str = "ddf.json";
pub const PAIRING_FILE: &str = "pairing.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Moving,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseManifest {
    pub version: u32,
    pub role: Role,
    pub image_ref: String,
    pub feature_ref: String,
    pub mask_refs: Vec<String>,
    pub mask_meta: Vec<MaskMeta>,
    pub dims: Dims,
    pub spacing: Vec<f64>,
    pub feature_dims: Dims,
    pub feature_channels: usize,
}

/// Everything one side of a registration needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub role: Role,
    pub image: Image,
    pub features: FeatureMap,
    pub masks: MaskSet,
}

pub fn mask_file_name(i: usize) -> String {
    format!("mask_{i:03}.raw")
}

/// Grid the masks of a case live on: the image grid, or the in-plane grid
/// when the masks are per-slice.
fn mask_grid(image_dims: Dims, meta: &[MaskMeta]) -> Result<Dims> {
    let sliced = meta.iter().filter(|m| m.source_slice.is_some()).count();
    if sliced == 0 {
        return Ok(image_dims);
    }
    if sliced != meta.len() {
        return Err(Error::InconsistentDims(
            "either all masks or none carry a source_slice".into(),
        ));
    }
    let plane = image_dims.in_plane()?;
    for m in meta {
        let z = m.source_slice.unwrap_or_default();
        if z >= image_dims.extent(0) {
            return Err(Error::SliceOutOfRange {
                index: z,
                depth: image_dims.extent(0),
            });
        }
    }
    Ok(plane)
}

pub fn encode_f32(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

fn encode_mask(mask: &BinaryMask) -> Vec<u8> {
    mask.bits().iter().map(|&b| b as u8).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_exact_len(path: &Path, expected: u64) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

pub fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Reads `count` little-endian f32 values.
pub fn read_raw_f32(path: &Path, count: usize) -> Result<Vec<f32>> {
    let expected = (count as u64).checked_mul(4).ok_or_else(|| Error::SizeMismatch {
        path: path.to_path_buf(),
        expected: u64::MAX,
        found: 0,
    })?;
    Ok(decode_f32(&read_exact_len(path, expected)?))
}

pub fn write_raw_f32(path: &Path, values: impl IntoIterator<Item = f32>) -> Result<()> {
    write_file(path, &encode_f32(values))
}

/// Reads a one-byte-per-voxel mask; bytes other than 0/1 are rejected.
pub fn read_raw_mask(path: &Path, dims: Dims) -> Result<BinaryMask> {
    let bytes = read_exact_len(path, dims.len() as u64)?;
    if let Some(bad) = bytes.iter().find(|&&b| b > 1) {
        return Err(Error::ManifestParse {
            path: path.to_path_buf(),
            message: format!("mask byte {bad} is not 0 or 1"),
        });
    }
    BinaryMask::new(dims, bytes.into_iter().map(|b| b == 1).collect())
}

pub fn write_raw_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_file(path, &encode_mask(mask))
}

fn to_canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    // serde_json::Value keeps object keys in a BTreeMap, so this sorts them.
    let v = serde_json::to_value(value).expect("manifest types always serialize");
    let mut s = serde_json::to_string_pretty(&v).expect("json value always serializes");
    s.push('\n');
    s.into_bytes()
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::ManifestParse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Rejects references that would escape the case directory.
fn check_ref(manifest_path: &Path, name: &str) -> Result<()> {
    let plain = !name.is_empty()
        && !name.contains('/')
        && !name.contains('\\')
        && name != "."
        && name != "..";
    if plain {
        Ok(())
    } else {
        Err(Error::ManifestParse {
            path: manifest_path.to_path_buf(),
            message: format!("file reference {name:?} must be a plain file name"),
        })
    }
}

/// Writes a case directory, creating it if needed. Returns the manifest written.
pub fn write_case(case: &Case, dir: &Path) -> Result<CaseManifest> {
    let dims = case.image.dims();
    let fdims = case.features.grid_dims();
    if fdims.ndim() != dims.ndim() {
        return Err(Error::InconsistentDims(format!(
            "feature grid {fdims} and image {dims} differ in rank"
        )));
    }
    let expected_mask_dims = mask_grid(dims, case.masks.meta())?;
    if let Some(md) = case.masks.dims() {
        if md != expected_mask_dims {
            return Err(Error::InconsistentDims(format!(
                "masks on {md}, expected {expected_mask_dims}"
            )));
        }
    }

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_raw_f32(&dir.join(IMAGE_FILE), case.image.data().iter().copied())?;
    write_raw_f32(&dir.join(FEATURE_FILE), case.features.data().iter().copied())?;
    let mut mask_refs = Vec::with_capacity(case.masks.len());
    for (i, m) in case.masks.masks().iter().enumerate() {
        let name = mask_file_name(i);
        write_raw_mask(&dir.join(&name), m)?;
        mask_refs.push(name);
    }

    let manifest = CaseManifest {
        version: FORMAT_VERSION,
        role: case.role,
        image_ref: IMAGE_FILE.into(),
        feature_ref: FEATURE_FILE.into(),
        mask_refs,
        mask_meta: case.masks.meta().to_vec(),
        dims,
        spacing: case.image.spacing().to_vec(),
        feature_dims: fdims,
        feature_channels: case.features.channels(),
    };
    write_file(&dir.join(MANIFEST_FILE), &to_canonical_json(&manifest))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CaseManifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: CaseManifest = parse_json(&path)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(manifest.version));
    }
    if manifest.mask_refs.len() != manifest.mask_meta.len() {
        return Err(Error::ManifestParse {
            path,
            message: format!(
                "{} mask_refs but {} mask_meta entries",
                manifest.mask_refs.len(),
                manifest.mask_meta.len()
            ),
        });
    }
    check_ref(&path, &manifest.image_ref)?;
    check_ref(&path, &manifest.feature_ref)?;
    for r in &manifest.mask_refs {
        check_ref(&path, r)?;
    }
    if manifest.feature_dims.ndim() != manifest.dims.ndim() {
        return Err(Error::InconsistentDims(format!(
            "feature grid {} and image {} differ in rank",
            manifest.feature_dims, manifest.dims
        )));
    }
    if manifest.feature_channels == 0 {
        return Err(Error::ManifestParse {
            path,
            message: "feature_channels must be positive".into(),
        });
    }
    Ok(manifest)
}

/// Loads and validates a case directory.
pub fn read_case(dir: &Path) -> Result<Case> {
    let manifest = read_manifest(dir)?;
    let dims = manifest.dims;
    let data = read_raw_f32(&dir.join(&manifest.image_ref), dims.len())?;
    let image = Image::new(dims, manifest.spacing.clone(), data)?;

    let feature_count = manifest
        .feature_channels
        .checked_mul(manifest.feature_dims.len())
        .ok_or_else(|| Error::ManifestParse {
            path: dir.join(MANIFEST_FILE),
            message: "feature size overflows".into(),
        })?;
    let fdata = read_raw_f32(&dir.join(&manifest.feature_ref), feature_count)?;
    let features = FeatureMap::new(manifest.feature_channels, manifest.feature_dims, fdata)?;

    let mask_dims = mask_grid(dims, &manifest.mask_meta)?;
    let masks = manifest
        .mask_refs
        .iter()
        .map(|r| read_raw_mask(&dir.join(r), mask_dims))
        .collect::<Result<Vec<_>>>()?;
    let masks = MaskSet::new(masks, manifest.mask_meta.clone())?;

    Ok(Case {
        role: manifest.role,
        image,
        features,
        masks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdfMeta {
    pub dims: Dims,
    pub spacing: Vec<f64>,
}

pub fn write_ddf(dir: &Path, ddf: &DisplacementField, spacing: &[f64]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_raw_f32(&dir.join(DDF_RAW_FILE), ddf.data().iter().map(|&v| v as f32))?;
    let meta = DdfMeta {
        dims: ddf.dims(),
        spacing: spacing.to_vec(),
    };
    write_file(&dir.join(DDF_META_FILE), &to_canonical_json(&meta))
}

pub fn read_ddf(dir: &Path) -> Result<(DisplacementField, Vec<f64>)> {
    let meta: DdfMeta = parse_json(&dir.join(DDF_META_FILE))?;
    let n = meta.dims.len() * meta.dims.ndim();
    let data = read_raw_f32(&dir.join(DDF_RAW_FILE), n)?;
    let ddf = DisplacementField::new(meta.dims, data.into_iter().map(f64::from).collect())?;
    Ok((ddf, meta.spacing))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub moving_index: usize,
    pub fixed_index: usize,
    pub similarity: f64,
    pub moving_ref: String,
    pub fixed_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingFile {
    pub version: u32,
    pub dims: Option<Dims>,
    pub spacing: Vec<f64>,
    pub epsilon_used: f64,
    pub pairs: Vec<PairRecord>,
}

/// Writes `pairing.json` plus `pair_NNN_{moving,fixed}.raw` into `dir`.
pub fn write_pairing(dir: &Path, pairing: &RoiPairing, spacing: &[f64]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dims = if pairing.is_empty() {
        None
    } else {
        Some(pairing.dims()?)
    };
    let mut pairs = Vec::with_capacity(pairing.len());
    for (k, p) in pairing.pairs.iter().enumerate() {
        let moving_ref = format!("pair_{k:03}_moving.raw");
        let fixed_ref = format!("pair_{k:03}_fixed.raw");
        write_raw_mask(&dir.join(&moving_ref), &p.moving_mask)?;
        write_raw_mask(&dir.join(&fixed_ref), &p.fixed_mask)?;
        pairs.push(PairRecord {
            moving_index: p.moving_index,
            fixed_index: p.fixed_index,
            similarity: p.similarity,
            moving_ref,
            fixed_ref,
        });
    }
    let file = PairingFile {
        version: FORMAT_VERSION,
        dims,
        spacing: spacing.to_vec(),
        epsilon_used: pairing.epsilon_used,
        pairs,
    };
    let path = dir.join(PAIRING_FILE);
    write_file(&path, &to_canonical_json(&file))?;
    Ok(path)
}

/// Reads a pairing from `pairing.json` or a directory containing it.
/// Returns the pairing and its voxel spacing.
pub fn read_pairing(path: &Path) -> Result<(RoiPairing, Vec<f64>)> {
    let (dir, json) = if path.is_dir() {
        (path.to_path_buf(), path.join(PAIRING_FILE))
    } else {
        (
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
            path.to_path_buf(),
        )
    };
    let file: PairingFile = parse_json(&json)?;
    if file.version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(file.version));
    }
    let mut pairs = Vec::with_capacity(file.pairs.len());
    if let Some(dims) = file.dims {
        for rec in &file.pairs {
            check_ref(&json, &rec.moving_ref)?;
            check_ref(&json, &rec.fixed_ref)?;
            pairs.push(RoiPair {
                moving_index: rec.moving_index,
                fixed_index: rec.fixed_index,
                moving_mask: read_raw_mask(&dir.join(&rec.moving_ref), dims)?,
                fixed_mask: read_raw_mask(&dir.join(&rec.fixed_ref), dims)?,
                similarity: rec.similarity,
            });
        }
    } else if !file.pairs.is_empty() {
        return Err(Error::ManifestParse {
            path: json,
            message: "pairs listed without dims".into(),
        });
    }
    Ok((
        RoiPairing {
            pairs,
            epsilon_used: file.epsilon_used,
        },
        file.spacing,
    ))
}
