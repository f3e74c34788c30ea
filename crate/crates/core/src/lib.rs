//! ROI-pair image registration.
//!
//! Correspondence between a moving and a fixed image is represented as a set
//! of matched region pairs. Candidate regions from a segment-everything model
//! are filtered, embedded as mask-pooled feature prototypes and matched by
//! absolute cosine similarity. The pairs can optionally be turned into a dense
//! displacement field by iterative fitting, and scored with Dice and
//! centroid TRE.

pub mod cli;
pub mod ddf;
pub mod error;
pub mod grid;
pub mod interchange;
pub mod metrics;
pub mod roi;
pub mod synthetic;
pub mod types;

pub use error::{Error, Result};
pub use grid::Dims;
pub use types::{
    mask_centroid, overlap_ratio, AffineTransform, BinaryMask, DisplacementField, FeatureMap, Image,
    MaskMeta, MaskSet, Prototype, RoiPair, RoiPairing,
};
