use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{overlap_ratio, MaskMeta, MaskSet};

/// Outlier filter applied to raw segment-everything candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_area: usize,
    pub max_area: usize,
    pub max_overlap: f64,
    pub min_pred_iou: f64,
    pub min_stability: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_area: 200,
            max_area: 7000,
            max_overlap: 0.8,
            min_pred_iou: 0.90,
            min_stability: 0.90,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_area > self.max_area {
            return Err(Error::InvalidArgument(format!(
                "min_area {} exceeds max_area {}",
                self.min_area, self.max_area
            )));
        }
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return Err(Error::InvalidArgument(format!(
                "max_overlap {} outside [0, 1]",
                self.max_overlap
            )));
        }
        Ok(())
    }

    fn passes_quality(&self, meta: &MaskMeta) -> bool {
        meta.predicted_iou.map_or(true, |v| v >= self.min_pred_iou)
            && meta.stability_score.map_or(true, |v| v >= self.min_stability)
    }
}

/// Orders candidates best-first: higher predicted IoU (absent ranks below any
/// value), then larger area, then lower original index.
pub(crate) fn quality_order(masks: &MaskSet, a: usize, b: usize) -> Ordering {
    let (ma, qa) = masks.get(a).unwrap();
    let (mb, qb) = masks.get(b).unwrap();
    let iou = |m: &MaskMeta| m.predicted_iou.unwrap_or(f64::NEG_INFINITY);
    iou(qb)
        .total_cmp(&iou(qa))
        .then(mb.area().cmp(&ma.area()))
        .then(a.cmp(&b))
}

/// Indices (ascending) of the candidates that survive the filter.
pub fn filter_indices(masks: &MaskSet, cfg: &FilterConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    // MaskSet already guarantees a shared grid.
    let mut candidates: Vec<usize> = (0..masks.len())
        .filter(|&i| {
            let (m, meta) = masks.get(i).unwrap();
            (cfg.min_area..=cfg.max_area).contains(&m.area()) && cfg.passes_quality(meta)
        })
        .collect();
    candidates.sort_by(|&a, &b| quality_order(masks, a, b));

    let mut kept: Vec<usize> = Vec::with_capacity(candidates.len());
    for i in candidates {
        let mi = &masks.masks()[i];
        let mut redundant = false;
        for &k in &kept {
            if overlap_ratio(mi, &masks.masks()[k])? > cfg.max_overlap {
                redundant = true;
                break;
            }
        }
        if !redundant {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

/// Drops candidates outside the area range, below the quality thresholds,
/// or overlapping a better candidate by more than `max_overlap`.
/// Survivors keep their original relative order.
pub fn filter_rois(masks: &MaskSet, cfg: &FilterConfig) -> Result<MaskSet> {
    Ok(masks.select(&filter_indices(masks, cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;
    use crate::types::BinaryMask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rect(dims: Dims, y0: usize, x0: usize, h: usize, w: usize) -> BinaryMask {
        BinaryMask::from_voxels(dims, (y0..y0 + h).flat_map(|y| (x0..x0 + w).map(move |x| [y, x])))
            .unwrap()
    }

    #[test]
    fn small_mask_removed() {
        let dims = Dims::d2(64, 64).unwrap();
        let masks = MaskSet::from_masks(vec![rect(dims, 0, 0, 10, 15), rect(dims, 30, 30, 20, 20)])
            .unwrap();
        assert_eq!(masks.masks()[0].area(), 150);
        let kept = filter_indices(&masks, &FilterConfig::default()).unwrap();
        assert_eq!(kept, vec![1]);
    }

    #[test]
    fn identical_masks_deduplicated() {
        let dims = Dims::d2(64, 64).unwrap();
        let m = rect(dims, 5, 5, 20, 20);
        let masks = MaskSet::from_masks(vec![m.clone(), m]).unwrap();
        let kept = filter_indices(&masks, &FilterConfig::default()).unwrap();
        assert_eq!(kept, vec![0]);
    }

    #[test]
    fn quality_thresholds_apply_only_when_present() {
        let dims = Dims::d2(64, 64).unwrap();
        let masks = MaskSet::new(
            vec![rect(dims, 0, 0, 20, 20), rect(dims, 30, 0, 20, 20), rect(dims, 0, 30, 20, 20)],
            vec![
                MaskMeta { predicted_iou: Some(0.85), ..Default::default() },
                MaskMeta { stability_score: Some(0.95), ..Default::default() },
                MaskMeta::default(),
            ],
        )
        .unwrap();
        assert_eq!(filter_indices(&masks, &FilterConfig::default()).unwrap(), vec![1, 2]);
    }

    #[test]
    fn higher_predicted_iou_wins_overlap() {
        let dims = Dims::d2(64, 64).unwrap();
        let masks = MaskSet::new(
            vec![rect(dims, 0, 0, 20, 20), rect(dims, 0, 0, 20, 21)],
            vec![
                MaskMeta { predicted_iou: Some(0.91), ..Default::default() },
                MaskMeta { predicted_iou: Some(0.97), ..Default::default() },
            ],
        )
        .unwrap();
        assert_eq!(filter_indices(&masks, &FilterConfig::default()).unwrap(), vec![1]);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = FilterConfig { min_area: 10, max_area: 5, ..Default::default() };
        assert!(filter_indices(&MaskSet::default(), &cfg).is_err());
    }

    #[test]
    fn filtering_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = Dims::d2(48, 48).unwrap();
        for _ in 0..20 {
            let masks: Vec<BinaryMask> = (0..12)
                .map(|_| {
                    let (h, w) = (rng.gen_range(5..30), rng.gen_range(5..30));
                    rect(dims, rng.gen_range(0..48 - h), rng.gen_range(0..48 - w), h, w)
                })
                .collect();
            let set = MaskSet::from_masks(masks).unwrap();
            let cfg = FilterConfig { min_area: 50, max_area: 600, ..Default::default() };
            let once = filter_rois(&set, &cfg).unwrap();
            let twice = filter_rois(&once, &cfg).unwrap();
            assert_eq!(once, twice);
        }
    }
}
