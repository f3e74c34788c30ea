//! Candidate ROI filtering, prototype embedding, similarity and matching.

pub mod filter;
pub mod matching;
pub mod prototype;
pub mod similarity;
pub mod stack;

pub use filter::{filter_indices, filter_rois, FilterConfig};
pub use matching::{match_rois, select_pairs, IndexPair, MatchStrategy};
pub use prototype::{compute_prototype, compute_prototypes, downsample_mask};
pub use similarity::{similarity_matrix, SimilarityMatrix};
pub use stack::stack_slices_to_3d;

use crate::error::Result;
use crate::interchange::Case;
use crate::types::{MaskSet, Prototype, RoiPairing};

/// Settings for the whole segment-filter-embed-match chain.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MatchConfig {
    pub epsilon: f64,
    pub filter: FilterConfig,
    pub strategy: MatchStrategy,
    pub min_link_iou: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.8,
            filter: FilterConfig::default(),
            strategy: MatchStrategy::Greedy,
            min_link_iou: stack::DEFAULT_MIN_LINK_IOU,
        }
    }
}

/// Candidate masks of a case on the image grid; per-slice masks of a volume
/// are stacked into 3D candidates first.
pub fn volume_candidates(case: &Case, min_link_iou: f64) -> Result<MaskSet> {
    let dims = case.image.dims();
    match case.masks.dims() {
        Some(d) if d != dims => {
            let mut by_slice: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
            for (i, m) in case.masks.meta().iter().enumerate() {
                by_slice.entry(m.source_slice.unwrap_or_default()).or_default().push(i);
            }
            let per: Vec<(usize, MaskSet)> = by_slice
                .into_iter()
                .map(|(z, idx)| (z, case.masks.select(&idx)))
                .collect();
            stack_slices_to_3d(&per, dims, min_link_iou)
        }
        _ => Ok(case.masks.clone()),
    }
}

/// Filtered candidates with usable prototypes, plus their indices in the
/// unfiltered candidate set.
pub struct Embedded {
    pub masks: MaskSet,
    pub source_indices: Vec<usize>,
    pub prototypes: Vec<Prototype>,
}

/// Filters candidates and computes prototypes, dropping candidates that
/// vanish at feature resolution.
pub fn embed(candidates: &MaskSet, case: &Case, filter: &FilterConfig) -> Result<Embedded> {
    let kept = filter_indices(candidates, filter)?;
    let kept_masks = candidates.select(&kept);
    let protos = compute_prototypes(kept_masks.masks(), &case.features);
    let mut source_indices = Vec::new();
    let mut prototypes = Vec::new();
    let mut local = Vec::new();
    for (k, p) in protos.into_iter().enumerate() {
        match p {
            Ok(p) => {
                local.push(k);
                source_indices.push(kept[k]);
                prototypes.push(p);
            }
            Err(crate::Error::DegenerateMask(w)) => {
                log::warn!("candidate {} dropped: weight sum {w:e}", kept[k]);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Embedded {
        masks: kept_masks.select(&local),
        source_indices,
        prototypes,
    })
}

/// End-to-end matching of two cases. Pair indices refer to the candidate
/// sets after slice stacking (or the raw mask lists for volume masks).
pub fn register_cases(moving: &Case, fixed: &Case, cfg: &MatchConfig) -> Result<RoiPairing> {
    moving.image.dims().ensure_same(&fixed.image.dims(), "moving vs fixed image")?;
    let cx = volume_candidates(moving, cfg.min_link_iou)?;
    let cy = volume_candidates(fixed, cfg.min_link_iou)?;
    let ex = embed(&cx, moving, &cfg.filter)?;
    let ey = embed(&cy, fixed, &cfg.filter)?;
    let s = similarity_matrix(&ex.prototypes, &ey.prototypes)?;
    let mut pairing = match_rois(&ex.masks, &ey.masks, &s, cfg.epsilon, cfg.strategy)?;
    for p in &mut pairing.pairs {
        p.moving_index = ex.source_indices[p.moving_index];
        p.fixed_index = ey.source_indices[p.fixed_index];
    }
    Ok(pairing)
}
