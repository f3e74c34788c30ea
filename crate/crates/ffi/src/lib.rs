//! C ABI over the roireg engine.
//!
//! Objects are handed out as opaque pointers and released with the matching
//! `*_free` function. Every fallible call returns a [`RoiregStatus`]; on
//! failure a description is available from [`roireg_last_error`] on the same
//! thread. Panics are caught at the boundary and reported as
//! `ROIREG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use roireg::ddf::{fit_ddf, roundtrip, FitConfig};
use roireg::interchange::{read_case, read_ddf, read_pairing, write_ddf, write_pairing, Case};
use roireg::metrics::evaluate;
use roireg::roi::{register_cases, FilterConfig, MatchConfig, MatchStrategy};
use roireg::{DisplacementField, Error, RoiPairing};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoiregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimMismatch = 5,
    EmptyPairing = 6,
    NonFiniteLoss = 7,
    OutOfRange = 8,
    BufferTooSmall = 9,
    Panic = 10,
    Other = 11,
}

fn status_of(e: &Error) -> RoiregStatus {
    match e {
        Error::InvalidArgument(_) | Error::EmptyList(_) | Error::EmptyMask | Error::DegenerateMask(_) => {
            RoiregStatus::InvalidArgument
        }
        Error::Io { .. } => RoiregStatus::Io,
        Error::ManifestParse { .. } | Error::SizeMismatch { .. } | Error::UnsupportedVersion(_) => {
            RoiregStatus::Format
        }
        Error::DimMismatch(_)
        | Error::InconsistentDims(_)
        | Error::ChannelMismatch { .. }
        | Error::GridTooSmall(_) => RoiregStatus::DimMismatch,
        Error::EmptyPairing => RoiregStatus::EmptyPairing,
        Error::NonFiniteLoss { .. } => RoiregStatus::NonFiniteLoss,
        Error::SliceOutOfRange { .. }
        | Error::PointOutOfRange(_)
        | Error::DisplacedPointOutOfRange(_)
        | Error::OutOfBounds(_) => RoiregStatus::OutOfRange,
        _ => RoiregStatus::Other,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

struct Failure(RoiregStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RoiregStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RoiregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            RoiregStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            RoiregStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RoiregStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// A moving or fixed case read from an interchange directory.
pub struct RoiregCase(Case);

/// Matched ROI pairs plus the voxel spacing they live on.
pub struct RoiregPairing {
    pairing: RoiPairing,
    spacing: Vec<f64>,
}

/// A dense displacement field plus its voxel spacing.
pub struct RoiregDdf {
    ddf: DisplacementField,
    spacing: Vec<f64>,
}

/// Engine version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn roireg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn roireg_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `dir` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn roireg_case_read(dir: *const c_char, out: *mut *mut RoiregCase) -> RoiregStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        store(out, RoiregCase(read_case(&dir)?))
    })
}

/// # Safety
/// `handle` must be NULL or a pointer from [`roireg_case_read`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn roireg_case_free(handle: *mut RoiregCase) {
    free(handle)
}

/// # Safety
/// `handle` must be a live case handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn roireg_case_num_masks(handle: *const RoiregCase, out: *mut usize) -> RoiregStatus {
    guard(|| {
        let case = obj(handle, "case")?;
        *out.as_mut().ok_or_else(|| null("out"))? = case.0.masks.len();
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiregMatchConfig {
    pub epsilon: f64,
    pub min_area: usize,
    pub max_area: usize,
    pub max_overlap: f64,
    pub min_pred_iou: f64,
    pub min_stability: f64,
    pub min_link_iou: f64,
    /// Maximize total similarity instead of greedy selection.
    pub optimal: bool,
}

impl From<&RoiregMatchConfig> for MatchConfig {
    fn from(c: &RoiregMatchConfig) -> Self {
        MatchConfig {
            epsilon: c.epsilon,
            filter: FilterConfig {
                min_area: c.min_area,
                max_area: c.max_area,
                max_overlap: c.max_overlap,
                min_pred_iou: c.min_pred_iou,
                min_stability: c.min_stability,
            },
            strategy: if c.optimal {
                MatchStrategy::Optimal
            } else {
                MatchStrategy::Greedy
            },
            min_link_iou: c.min_link_iou,
        }
    }
}

#[no_mangle]
pub extern "C" fn roireg_match_config_default() -> RoiregMatchConfig {
    let d = MatchConfig::default();
    RoiregMatchConfig {
        epsilon: d.epsilon,
        min_area: d.filter.min_area,
        max_area: d.filter.max_area,
        max_overlap: d.filter.max_overlap,
        min_pred_iou: d.filter.min_pred_iou,
        min_stability: d.filter.min_stability,
        min_link_iou: d.min_link_iou,
        optimal: d.strategy == MatchStrategy::Optimal,
    }
}

/// Matches the candidate ROIs of two cases. An empty pairing (no similarity
/// above epsilon) is a success; check [`roireg_pairing_len`].
///
/// # Safety
/// `moving` and `fixed` must be live case handles, `config` NULL (defaults)
/// or a valid config, and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn roireg_match(
    moving: *const RoiregCase,
    fixed: *const RoiregCase,
    config: *const RoiregMatchConfig,
    out: *mut *mut RoiregPairing,
) -> RoiregStatus {
    guard(|| {
        let moving = obj(moving, "moving")?;
        let fixed = obj(fixed, "fixed")?;
        let cfg = config.as_ref().map(MatchConfig::from).unwrap_or_default();
        cfg.filter.validate()?;
        let pairing = register_cases(&moving.0, &fixed.0, &cfg)?;
        let spacing = moving.0.image.spacing().to_vec();
        store(out, RoiregPairing { pairing, spacing })
    })
}

/// Reads `pairing.json` or a directory containing it.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn roireg_pairing_read(path: *const c_char, out: *mut *mut RoiregPairing) -> RoiregStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let (pairing, spacing) = read_pairing(&path)?;
        store(out, RoiregPairing { pairing, spacing })
    })
}

/// # Safety
/// `pairing` must be a live pairing handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn roireg_pairing_len(pairing: *const RoiregPairing, out: *mut usize) -> RoiregStatus {
    guard(|| {
        let p = obj(pairing, "pairing")?;
        *out.as_mut().ok_or_else(|| null("out"))? = p.pairing.len();
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiregPairInfo {
    /// Index into the moving candidate list.
    pub moving_index: usize,
    /// Index into the fixed candidate list.
    pub fixed_index: usize,
    pub similarity: f64,
    pub moving_area: usize,
    pub fixed_area: usize,
}

/// # Safety
/// `pairing` must be a live pairing handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn roireg_pairing_get(
    pairing: *const RoiregPairing,
    index: usize,
    out: *mut RoiregPairInfo,
) -> RoiregStatus {
    guard(|| {
        let p = obj(pairing, "pairing")?;
        let pair = p.pairing.pairs.get(index).ok_or_else(|| {
            Failure(
                RoiregStatus::OutOfRange,
                format!("pair {index} of {}", p.pairing.len()),
            )
        })?;
        *out.as_mut().ok_or_else(|| null("out"))? = RoiregPairInfo {
            moving_index: pair.moving_index,
            fixed_index: pair.fixed_index,
            similarity: pair.similarity,
            moving_area: pair.moving_mask.area(),
            fixed_area: pair.fixed_mask.area(),
        };
        Ok(())
    })
}

/// Writes `pairing.json` and the paired mask files into `dir`.
///
/// # Safety
/// `pairing` must be a live pairing handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn roireg_pairing_write(pairing: *const RoiregPairing, dir: *const c_char) -> RoiregStatus {
    guard(|| {
        let p = obj(pairing, "pairing")?;
        write_pairing(&path_arg(dir, "dir")?, &p.pairing, &p.spacing)?;
        Ok(())
    })
}

/// # Safety
/// `pairing` must be NULL or a pairing handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn roireg_pairing_free(pairing: *mut RoiregPairing) {
    free(pairing)
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiregFitConfig {
    /// Smoothness weight.
    pub lambda: f64,
    pub iterations: usize,
    pub step_size: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dice_smooth: f64,
    pub convergence_tol: f64,
}

impl From<&RoiregFitConfig> for FitConfig {
    fn from(c: &RoiregFitConfig) -> Self {
        FitConfig {
            lambda: c.lambda,
            iterations: c.iterations,
            step_size: c.step_size,
            adam_beta1: c.adam_beta1,
            adam_beta2: c.adam_beta2,
            adam_eps: c.adam_eps,
            dice_smooth: c.dice_smooth,
            convergence_tol: c.convergence_tol,
        }
    }
}

#[no_mangle]
pub extern "C" fn roireg_fit_config_default() -> RoiregFitConfig {
    let d = FitConfig::default();
    RoiregFitConfig {
        lambda: d.lambda,
        iterations: d.iterations,
        step_size: d.step_size,
        adam_beta1: d.adam_beta1,
        adam_beta2: d.adam_beta2,
        adam_eps: d.adam_eps,
        dice_smooth: d.dice_smooth,
        convergence_tol: d.convergence_tol,
    }
}

/// Fits a displacement field to the pairs. `final_loss`, when not NULL,
/// receives the loss of the returned field.
///
/// # Safety
/// `pairing` must be a live pairing handle, `config` NULL (defaults) or a
/// valid config, `out` a writable pointer and `final_loss` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn roireg_fit_ddf(
    pairing: *const RoiregPairing,
    config: *const RoiregFitConfig,
    out: *mut *mut RoiregDdf,
    final_loss: *mut f64,
) -> RoiregStatus {
    guard(|| {
        let p = obj(pairing, "pairing")?;
        let cfg = config.as_ref().map(FitConfig::from).unwrap_or_default();
        let fit = fit_ddf(&p.pairing, &cfg)?;
        if let Some(l) = final_loss.as_mut() {
            *l = fit.history[fit.best_iteration].total;
        }
        store(
            out,
            RoiregDdf {
                ddf: fit.ddf,
                spacing: p.spacing.clone(),
            },
        )
    })
}

/// Reads `ddf.json` and `ddf.raw` from `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn roireg_ddf_read(dir: *const c_char, out: *mut *mut RoiregDdf) -> RoiregStatus {
    guard(|| {
        let (ddf, spacing) = read_ddf(&path_arg(dir, "dir")?)?;
        store(out, RoiregDdf { ddf, spacing })
    })
}

/// Writes the number of axes to `ndim` and the extents, in axis order, to the
/// first `ndim` entries of `dims` (which must hold 3).
///
/// # Safety
/// `ddf` must be a live field handle, `dims` point to 3 writable values and
/// `ndim` be writable.
#[no_mangle]
pub unsafe extern "C" fn roireg_ddf_dims(ddf: *const RoiregDdf, dims: *mut usize, ndim: *mut usize) -> RoiregStatus {
    guard(|| {
        let d = obj(ddf, "ddf")?.ddf.dims();
        if dims.is_null() {
            return Err(null("dims"));
        }
        *ndim.as_mut().ok_or_else(|| null("ndim"))? = d.ndim();
        for (a, &e) in d.as_slice().iter().enumerate() {
            *dims.add(a) = e;
        }
        Ok(())
    })
}

/// Copies the field, component-major in voxel units, into `buf`, which must
/// hold `ndim * num_voxels` values.
///
/// # Safety
/// `ddf` must be a live field handle and `buf` point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn roireg_ddf_copy(ddf: *const RoiregDdf, buf: *mut f64, len: usize) -> RoiregStatus {
    guard(|| {
        let data = obj(ddf, "ddf")?.ddf.data();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < data.len() {
            return Err(Failure(
                RoiregStatus::BufferTooSmall,
                format!("buffer holds {len} values, field has {}", data.len()),
            ));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

/// # Safety
/// `ddf` must be a live field handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn roireg_ddf_write(ddf: *const RoiregDdf, dir: *const c_char) -> RoiregStatus {
    guard(|| {
        let d = obj(ddf, "ddf")?;
        write_ddf(&path_arg(dir, "dir")?, &d.ddf, &d.spacing)?;
        Ok(())
    })
}

/// # Safety
/// `ddf` must be NULL or a field handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn roireg_ddf_free(ddf: *mut RoiregDdf) {
    free(ddf)
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiregEvalSummary {
    pub mean_dice: f64,
    /// NaN when every ROI warped to an empty mask.
    pub tre: f64,
    pub num_rois: usize,
    pub dropped_rois: usize,
}

/// Scores the pairing, warping the fixed masks through `ddf` unless it is NULL.
///
/// # Safety
/// `pairing` must be a live pairing handle, `ddf` NULL or a live field handle
/// and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn roireg_evaluate(
    pairing: *const RoiregPairing,
    ddf: *const RoiregDdf,
    out: *mut RoiregEvalSummary,
) -> RoiregStatus {
    guard(|| {
        let p = obj(pairing, "pairing")?;
        let field = ddf.as_ref().map(|d| &d.ddf);
        let r = evaluate(&p.pairing, field, &p.spacing)?;
        *out.as_mut().ok_or_else(|| null("out"))? = RoiregEvalSummary {
            mean_dice: r.mean_dice,
            tre: r.tre.unwrap_or(f64::NAN),
            num_rois: r.num_rois,
            dropped_rois: r.dropped_rois,
        };
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiregRoundtripSummary {
    pub num_points: usize,
    /// Points displaced outside the grid.
    pub skipped: usize,
    pub integer_field: bool,
    pub max_abs_error: f64,
}

/// Samples every voxel of the field into single-voxel pairs, rebuilds the
/// field from them and reports the reconstruction error.
///
/// # Safety
/// `ddf` must be a live field handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn roireg_roundtrip(ddf: *const RoiregDdf, out: *mut RoiregRoundtripSummary) -> RoiregStatus {
    guard(|| {
        let r = roundtrip(&obj(ddf, "ddf")?.ddf)?;
        *out.as_mut().ok_or_else(|| null("out"))? = RoiregRoundtripSummary {
            num_points: r.num_points,
            skipped: r.skipped,
            integer_field: r.integer_field,
            max_abs_error: r.max_abs_error,
        };
        Ok(())
    })
}
