//! Dense displacement fields: warping, the fitting objective and the
//! conversion to and from single-voxel ROI pairs.

pub mod fit;
pub mod loss;
pub mod sample;
pub mod warp;

pub use fit::{evaluate_objective, fit_ddf, objective_with_gradient, FitConfig, FitResult};
pub use loss::{objective, roi_loss, roi_loss_with_gradient, smoothness_loss, LossBreakdown, SoftPair};
pub use sample::{all_voxels, ddf_to_roi_pairs, reconstruct_ddf, roundtrip, RoundtripReport, SampledPairs};
pub use warp::{warp_grid, warp_grid_with_gradient, warp_mask};
