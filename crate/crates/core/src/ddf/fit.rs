//! Iterative dense-field fitting from matched ROI pairs.
//!
//! The field lives on the moving grid and resamples each fixed mask into
//! moving space. It starts at zero and is refined with Adam on the exact
//! gradient of the objective in [`crate::ddf::loss`].

use serde::{Deserialize, Serialize};

use crate::ddf::loss::{objective, LossBreakdown, SoftPair};
use crate::error::{Error, Result};
use crate::types::{DisplacementField, RoiPairing};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lambda: f64,
    pub iterations: usize,
    pub step_size: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dice_smooth: f64,
    /// Stop once the relative loss decrease between iterations is
    /// non-negative and below this value.
    pub convergence_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            iterations: 300,
            step_size: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            dice_smooth: 1e-5,
            convergence_tol: 1e-7,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda >= 0.0
            && self.lambda.is_finite()
            && self.step_size > 0.0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_eps > 0.0
            && self.dice_smooth > 0.0
            && self.convergence_tol >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid fit configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Lowest-loss field visited.
    pub ddf: DisplacementField,
    /// One entry per evaluated field, in order.
    pub history: Vec<LossBreakdown>,
    /// Index into `history` of the returned field.
    pub best_iteration: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &FitConfig) {
        self.t += 1;
        let b1 = cfg.adam_beta1;
        let b2 = cfg.adam_beta2;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.step_size * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Total loss (with breakdown) of a given field for a pairing.
pub fn evaluate_objective(
    pairing: &RoiPairing,
    ddf: &DisplacementField,
    lambda: f64,
    dice_smooth: f64,
) -> Result<LossBreakdown> {
    Ok(objective_with_gradient(pairing, ddf, lambda, dice_smooth)?.0)
}

/// Total loss and its gradient with respect to every field component
/// (component-major, same layout as the field).
pub fn objective_with_gradient(
    pairing: &RoiPairing,
    ddf: &DisplacementField,
    lambda: f64,
    dice_smooth: f64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let dims = pairing.dims()?;
    dims.ensure_same(&ddf.dims(), "pairing vs displacement field")?;
    objective(&soft_pairs(pairing), ddf, lambda, dice_smooth)
}

fn soft_pairs(pairing: &RoiPairing) -> Vec<SoftPair> {
    pairing
        .pairs
        .iter()
        .map(|p| SoftPair {
            moving: p.moving_mask.to_soft(),
            fixed: p.fixed_mask.to_soft(),
        })
        .collect()
}

/// Fits a displacement field that carries every fixed mask onto its moving
/// partner while keeping the field smooth.
pub fn fit_ddf(pairing: &RoiPairing, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if pairing.is_empty() {
        return Err(Error::EmptyPairing);
    }
    let dims = pairing.dims()?;
    let pairs = soft_pairs(pairing);
    let mut ddf = DisplacementField::zeros(dims);
    let mut adam = Adam::new(ddf.data().len());
    let mut history: Vec<LossBreakdown> = Vec::with_capacity(cfg.iterations + 1);
    let mut best: Option<(f64, usize, DisplacementField)> = None;

    for it in 0..=cfg.iterations {
        let (loss, grad) = objective(&pairs, &ddf, cfg.lambda, cfg.dice_smooth)?;
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        let total = loss.total;
        if best.as_ref().map_or(true, |(b, _, _)| total < *b) {
            best = Some((total, it, ddf.clone()));
        }
        let prev = history.last().map(|l| l.total);
        history.push(loss);
        if let Some(prev) = prev {
            let rel = (prev - total) / prev.abs().max(f64::MIN_POSITIVE);
            if (0.0..cfg.convergence_tol).contains(&rel) {
                log::debug!("converged at iteration {it} (relative decrease {rel:e})");
                break;
            }
        }
        if it == cfg.iterations {
            break;
        }
        adam.step(ddf.data_mut(), &grad, cfg);
    }

    let (_, best_iteration, ddf) = best.expect("at least one evaluation");
    Ok(FitResult {
        ddf,
        history,
        best_iteration,
    })
}
