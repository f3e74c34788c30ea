use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{
    finish_record, AblateArgs, CliError, CliResult, EvalArgs, FitArgs, MatchArgs, ReplayArgs, RoundtripArgs,
    RunRecord, Stopwatch, Sweep, SynthArgs, WarpArgs, ABLATION_FILE, LOSS_HISTORY_FILE, WARPED_FILE,
};
use crate::ddf::{fit_ddf, roundtrip, warp_grid, warp_mask, FitConfig, FitResult, LossBreakdown, RoundtripReport};
use crate::error::Error;
use crate::grid::Dims;
use crate::interchange::{
    read_case, read_ddf, read_pairing, read_raw_f32, read_raw_mask, write_ddf, write_pairing, write_raw_f32,
    write_raw_mask, Case, PairingFile, DDF_META_FILE, DDF_RAW_FILE, PAIRING_FILE,
};
use crate::metrics::{evaluate, EvalReport, BINARIZE_AT};
use crate::roi::{register_cases, FilterConfig, MatchConfig, MatchStrategy};
use crate::synthetic::{generate_case, write_synthetic, SyntheticSpec, GROUND_TRUTH_FILE};
use crate::types::{AffineTransform, BinaryMask, DisplacementField, RoiPairing};

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn check_unit_interval(name: &str, v: f64) -> CliResult<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(CliError::usage(format!("--{name} must lie in [0, 1], got {v}")))
    }
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<RunRecord> {
    let mut watch = Stopwatch::start();
    let dims = Dims::new(&a.dims).map_err(CliError::usage)?;
    let t = match dims.ndim() {
        2 if a.tz != 0.0 => return Err(CliError::usage("--tz needs a 3D grid")),
        2 => vec![a.ty, a.tx],
        _ => vec![a.tz, a.ty, a.tx],
    };
    let transform = if a.rotate == 0.0 {
        AffineTransform::translation(&t)
    } else {
        AffineTransform::rotation(dims.ndim(), a.rotate, &t)?
    };
    let spec = SyntheticSpec {
        dims,
        spacing: vec![1.0; dims.ndim()],
        num_shapes: a.shapes,
        shape_kinds: a.kinds.iter().map(|&k| k.into()).collect(),
        transform,
        feature_channels: a.channels.unwrap_or(a.shapes + 2),
        feature_stride: a.feature_stride,
        feature_noise_sigma: a.noise,
        seed: a.seed,
    };
    spec.validate().map_err(CliError::usage)?;

    let case = generate_case(&spec)?;
    watch.lap("generate");
    create_dir(&a.out)?;
    write_synthetic(&case, &a.out)?;
    watch.lap("write");
    let outputs = vec![a.out.join("moving"), a.out.join("fixed"), a.out.join(GROUND_TRUTH_FILE)];
    finish_record("synth", a, watch, &a.out, outputs)
}

fn pairing_outputs(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let path = dir.join(PAIRING_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let file: PairingFile = serde_json::from_slice(&bytes).map_err(|e| Error::ManifestParse {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let mut out = vec![path];
    for p in &file.pairs {
        out.push(dir.join(&p.moving_ref));
        out.push(dir.join(&p.fixed_ref));
    }
    Ok(out)
}

fn match_config(a: &MatchArgs) -> CliResult<MatchConfig> {
    check_unit_interval("epsilon", a.epsilon)?;
    check_unit_interval("min-link-iou", a.min_link_iou)?;
    let filter = FilterConfig {
        min_area: a.min_area,
        max_area: a.max_area,
        max_overlap: a.max_overlap,
        min_pred_iou: a.min_pred_iou,
        min_stability: a.min_stability,
    };
    filter.validate().map_err(CliError::usage)?;
    Ok(MatchConfig {
        epsilon: a.epsilon,
        filter,
        strategy: if a.optimal { MatchStrategy::Optimal } else { MatchStrategy::Greedy },
        min_link_iou: a.min_link_iou,
    })
}

fn no_pairs(epsilon: f64) -> CliError {
    CliError::failure(format!("no ROI pairs with similarity above epsilon {epsilon} (K=0)"))
}

pub fn cmd_match(a: &MatchArgs) -> CliResult<RunRecord> {
    let mut watch = Stopwatch::start();
    let cfg = match_config(a)?;
    let moving = read_case(&a.moving)?;
    let fixed = read_case(&a.fixed)?;
    watch.lap("read");
    let pairing = register_cases(&moving, &fixed, &cfg)?;
    watch.lap("match");
    if pairing.is_empty() {
        return Err(no_pairs(a.epsilon));
    }
    log::info!("matched {} ROI pairs", pairing.len());
    create_dir(&a.out)?;
    write_pairing(&a.out, &pairing, moving.image.spacing())?;
    watch.lap("write");
    let outputs = pairing_outputs(&a.out)?;
    finish_record("match", a, watch, &a.out, outputs)
}

fn fit_config(lambda: f64, iters: usize, step: f64) -> CliResult<FitConfig> {
    let cfg = FitConfig {
        lambda,
        iterations: iters,
        step_size: step,
        ..FitConfig::default()
    };
    cfg.validate().map_err(CliError::usage)?;
    Ok(cfg)
}

fn loss_history_csv(history: &[LossBreakdown]) -> String {
    let mut s = String::from("iter,total,roi_mse,roi_dice,smoothness\n");
    for (i, h) in history.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{},{},{}", h.total, h.roi_mse, h.roi_dice, h.smoothness);
    }
    s
}

pub fn cmd_fit_ddf(a: &FitArgs) -> CliResult<RunRecord> {
    let mut watch = Stopwatch::start();
    let cfg = fit_config(a.lambda, a.iters, a.step)?;
    let (pairing, spacing) = read_pairing(&a.pairing)?;
    watch.lap("read");
    let fit: FitResult = fit_ddf(&pairing, &cfg)?;
    watch.lap("fit");
    log::info!(
        "best loss {} at iteration {}",
        fit.history[fit.best_iteration].total,
        fit.best_iteration
    );
    create_dir(&a.out)?;
    write_ddf(&a.out, &fit.ddf, &spacing)?;
    let history = a.out.join(LOSS_HISTORY_FILE);
    write_text(&history, &loss_history_csv(&fit.history))?;
    watch.lap("write");
    let outputs = vec![a.out.join(DDF_RAW_FILE), a.out.join(DDF_META_FILE), history];
    finish_record("fit-ddf", a, watch, &a.out, outputs)
}

pub fn cmd_warp(a: &WarpArgs) -> CliResult<RunRecord> {
    let mut watch = Stopwatch::start();
    let (ddf, _) = read_ddf(&a.ddf)?;
    let dims = ddf.dims();
    let out = a.out.join(WARPED_FILE);
    if a.mask {
        let mask = read_raw_mask(&a.input, dims)?;
        watch.lap("read");
        let warped = BinaryMask::from_soft(dims, &warp_mask(&mask, &ddf)?, BINARIZE_AT)?;
        watch.lap("warp");
        create_dir(&a.out)?;
        write_raw_mask(&out, &warped)?;
    } else {
        let values: Vec<f64> = read_raw_f32(&a.input, dims.len())?.into_iter().map(f64::from).collect();
        watch.lap("read");
        let warped = warp_grid(&values, dims, &ddf)?;
        watch.lap("warp");
        create_dir(&a.out)?;
        write_raw_f32(&out, warped.iter().map(|&v| v as f32))?;
    }
    watch.lap("write");
    finish_record("warp", a, watch, &a.out, vec![out])
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<EvalReport> {
    let (pairing, stored) = read_pairing(&a.pairing)?;
    let spacing = a.spacing.clone().unwrap_or(stored);
    let ddf = a.ddf.as_deref().map(read_ddf).transpose()?.map(|(d, _)| d);
    if let Ok(dims) = pairing.dims() {
        if spacing.len() != dims.ndim() {
            return Err(CliError::usage(format!(
                "--spacing needs {} values, got {}",
                dims.ndim(),
                spacing.len()
            )));
        }
    }
    let report = evaluate(&pairing, ddf.as_ref(), &spacing)?;
    if let Some(out) = &a.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
        text.push('\n');
        write_text(out, &text)?;
    }
    Ok(report)
}

pub fn cmd_roundtrip(a: &RoundtripArgs) -> CliResult<RoundtripReport> {
    let (ddf, _) = read_ddf(&a.ddf)?;
    Ok(roundtrip(&ddf)?)
}

/// One line of an ablation sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub setting: f64,
    pub mean_dice: f64,
    pub tre: Option<f64>,
    pub num_pairs: usize,
}

fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("setting,mean_dice,tre,num_pairs\n");
    for r in rows {
        let tre = r.tre.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{tre},{}", r.setting, r.mean_dice, r.num_pairs);
    }
    s
}

fn score(
    reference: &RoiPairing,
    fitted: Option<&RoiPairing>,
    cfg: &FitConfig,
    spacing: &[f64],
) -> CliResult<(f64, Option<f64>)> {
    let ddf = match fitted {
        Some(p) => fit_ddf(p, cfg)?.ddf,
        None => DisplacementField::zeros(reference.dims()?),
    };
    let r = evaluate(reference, Some(&ddf), spacing)?;
    Ok((r.mean_dice, r.tre))
}

fn cases(a: &AblateArgs) -> CliResult<(Case, Case)> {
    Ok((read_case(&a.moving)?, read_case(&a.fixed)?))
}

/// Every setting is scored on the reference pairing (matched at
/// `--eval-epsilon`), so rows are comparable. A threshold that yields no
/// pairs is scored with the zero field.
pub fn cmd_ablate(a: &AblateArgs) -> CliResult<(RunRecord, Vec<AblationRow>)> {
    let mut watch = Stopwatch::start();
    check_unit_interval("eval-epsilon", a.eval_epsilon)?;
    match a.sweep {
        Sweep::K if a.k_max == Some(0) => return Err(CliError::usage("--k-max must be at least 1")),
        Sweep::Epsilon if a.epsilons.is_empty() => return Err(CliError::usage("--epsilons is empty")),
        Sweep::Epsilon => {
            for &e in &a.epsilons {
                check_unit_interval("epsilons", e)?;
            }
        }
        Sweep::K => {}
    }
    let fit_cfg = fit_config(a.lambda, a.iters, a.step)?;
    let (moving, fixed) = cases(a)?;
    watch.lap("read");

    let base = MatchConfig {
        epsilon: a.eval_epsilon,
        ..MatchConfig::default()
    };
    let reference = register_cases(&moving, &fixed, &base)?;
    if reference.is_empty() {
        return Err(no_pairs(a.eval_epsilon));
    }
    watch.lap("match");
    let spacing = moving.image.spacing();

    let mut rows = Vec::new();
    match a.sweep {
        Sweep::K => {
            let mut k_max = a.k_max.unwrap_or(reference.len());
            if k_max > reference.len() {
                log::warn!("--k-max {k_max} exceeds the {} available pairs", reference.len());
                k_max = reference.len();
            }
            for k in 1..=k_max {
                let top = reference.top_k(k);
                let (mean_dice, tre) = score(&reference, Some(&top), &fit_cfg, spacing)?;
                rows.push(AblationRow {
                    setting: k as f64,
                    mean_dice,
                    tre,
                    num_pairs: top.len(),
                });
            }
        }
        Sweep::Epsilon => {
            for &epsilon in &a.epsilons {
                let p = register_cases(&moving, &fixed, &MatchConfig { epsilon, ..base })?;
                let fitted = (!p.is_empty()).then_some(&p);
                let (mean_dice, tre) = score(&reference, fitted, &fit_cfg, spacing)?;
                rows.push(AblationRow {
                    setting: epsilon,
                    mean_dice,
                    tre,
                    num_pairs: p.len(),
                });
            }
        }
    }
    watch.lap("sweep");

    create_dir(&a.out)?;
    let csv = a.out.join(ABLATION_FILE);
    write_text(&csv, &ablation_csv(&rows))?;
    let record = finish_record("ablate", a, watch, &a.out, vec![csv])?;
    Ok((record, rows))
}

fn snapshot<T: serde::de::DeserializeOwned>(record: &RunRecord) -> CliResult<T> {
    serde_json::from_value(record.config_snapshot.clone())
        .map_err(|e| CliError::usage(format!("config snapshot for {:?}: {e}", record.command)))
}

/// Re-runs the command captured in a run record with the same arguments.
pub fn cmd_replay(a: &ReplayArgs) -> CliResult<RunRecord> {
    let bytes = fs::read(&a.record).map_err(|e| Error::io(&a.record, e))?;
    let record: RunRecord = serde_json::from_slice(&bytes).map_err(|e| {
        CliError::usage(Error::ManifestParse {
            path: a.record.clone(),
            message: e.to_string(),
        })
    })?;
    match record.command.as_str() {
        "synth" => cmd_synth(&snapshot(&record)?),
        "match" => cmd_match(&snapshot(&record)?),
        "fit-ddf" => cmd_fit_ddf(&snapshot(&record)?),
        "warp" => cmd_warp(&snapshot(&record)?),
        "ablate" => cmd_ablate(&snapshot(&record)?).map(|(r, _)| r),
        other => Err(CliError::usage(format!("cannot replay command {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layouts() {
        let h = LossBreakdown {
            total: 1.5,
            roi_mse: 0.25,
            roi_dice: 1.0,
            smoothness: 0.25,
            per_pair: vec![],
        };
        assert_eq!(
            loss_history_csv(&[h]),
            "iter,total,roi_mse,roi_dice,smoothness\n0,1.5,0.25,1,0.25\n"
        );
        let rows = [
            AblationRow {
                setting: 0.8,
                mean_dice: 0.5,
                tre: Some(2.0),
                num_pairs: 3,
            },
            AblationRow {
                setting: 1.0,
                mean_dice: 0.25,
                tre: None,
                num_pairs: 0,
            },
        ];
        assert_eq!(ablation_csv(&rows), "setting,mean_dice,tre,num_pairs\n0.8,0.5,2,3\n1,0.25,,0\n");
    }
}
