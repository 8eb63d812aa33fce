//! C interface to the `diffsci` library.
//!
//! Objects are opaque handles created by `*_new`/`*_read` style functions
//! and released with the matching `*_free`. Every fallible call returns a
//! [`DsStatus`]; on failure, [`ds_last_error`] returns a message for the
//! calling thread. Output handles are written only on success.
//!
//! Cubes are band-major: element `(row, col, band)` lives at
//! `band * height * width + row * width + col`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use diffsci::metrics;
use diffsci::solver::{run_diffsci, PlanSpec, SolverConfig};
use diffsci::{
    CassiOperator, CodedMask, DiffusionSchedule, Error, Measurement, OracleTruth, PlanKind,
    PriorKind, SpectralCube,
};

/// Status codes; the numbering matches the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    /// Invalid argument, parameter or shape.
    Invalid = 2,
    /// File access or file format.
    Io = 3,
    /// Non-finite values or degenerate pixels.
    Numerical = 4,
    /// The prior failed.
    Prior = 5,
    NullPointer = 6,
    Panic = 7,
}

pub struct DsCube(SpectralCube);
pub struct DsMask(CodedMask);
pub struct DsMeasurement(Measurement);
pub struct DsOperator(CassiOperator);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsPlanKind {
    Partitioned = 0,
    Sliding = 1,
    WavelengthMatched = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsPriorKind {
    Identity = 0,
    GaussianShrink = 1,
    /// Requires the ground-truth cube.
    Oracle = 2,
}

/// Solver settings. Start from [`ds_solver_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DsSolverConfig {
    pub lambda: f64,
    pub zeta: f64,
    pub guidance_scale: f64,
    pub t_start: u32,
    pub step_count: u32,
    pub seed: u64,
    pub sigma_n: f64,
    pub plan: DsPlanKind,
    /// Zero-based anchor bands; negative picks the default pair.
    pub anchor_a: i32,
    pub anchor_b: i32,
    pub cutoff_nm: f64,
    pub accelerate: bool,
    pub warm_start: bool,
    pub normalize: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DsStatus {
    match e.exit_code() {
        3 => DsStatus::Io,
        4 => DsStatus::Numerical,
        5 => DsStatus::Prior,
        _ => DsStatus::Invalid,
    }
}

struct Null(&'static str);

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<Null> for Failure {
    fn from(n: Null) -> Self {
        Failure::Null(n.0)
    }
}

/// Runs `f`, converting errors and panics into a status and message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            DsStatus::NullPointer
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DsStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Null> {
    p.as_ref().ok_or(Null(what))
}

unsafe fn values<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Null> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Null> {
    if out.is_null() {
        return Err(Null("output handle"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::Lib(Error::InvalidParameter(format!("path is not UTF-8: {e}"))))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn ds_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New cube. `data` may be null for a zero cube; otherwise it holds
/// `height * width * bands` band-major values.
#[no_mangle]
pub unsafe extern "C" fn ds_cube_new(
    height: usize,
    width: usize,
    bands: usize,
    wavelengths: *const f64,
    data: *const f64,
    out: *mut *mut DsCube,
) -> DsStatus {
    guard(|| {
        let wl = values(wavelengths, bands, "wavelengths")?.to_vec();
        let n = height.checked_mul(width).and_then(|v| v.checked_mul(bands));
        let cube = match (data.is_null(), n) {
            (true, _) => SpectralCube::new(height, width, bands, wl, 0.0)?,
            (false, Some(n)) => {
                SpectralCube::from_vec(height, width, bands, wl, values(data, n, "data")?.to_vec())?
            }
            (false, None) => {
                return Err(Error::InvalidDimensions("cube size overflows".into()).into())
            }
        };
        Ok(put(out, DsCube(cube))?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_cube_free(cube: *mut DsCube) {
    free(cube)
}

/// Writes the dimensions of `cube`; any output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn ds_cube_dims(
    cube: *const DsCube,
    height: *mut usize,
    width: *mut usize,
    bands: *mut usize,
) -> DsStatus {
    guard(|| {
        let c = &borrow(cube, "cube")?.0;
        for (p, v) in [(height, c.height()), (width, c.width()), (bands, c.bands())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Band-major values, valid while the cube lives. Null for a null cube.
#[no_mangle]
pub unsafe extern "C" fn ds_cube_data(cube: *const DsCube) -> *const f64 {
    cube.as_ref().map_or(ptr::null(), |c| c.0.data().as_ptr())
}

/// `bands` wavelengths in nanometres, valid while the cube lives.
#[no_mangle]
pub unsafe extern "C" fn ds_cube_wavelengths(cube: *const DsCube) -> *const f64 {
    cube.as_ref()
        .map_or(ptr::null(), |c| c.0.wavelengths().as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn ds_cube_read(path_utf8: *const c_char, out: *mut *mut DsCube) -> DsStatus {
    guard(|| {
        let cube = diffsci::io::read_cube(path(path_utf8)?)?;
        Ok(put(out, DsCube(cube))?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_cube_write(cube: *const DsCube, path_utf8: *const c_char) -> DsStatus {
    guard(|| {
        Ok(diffsci::io::write_cube(
            &borrow(cube, "cube")?.0,
            path(path_utf8)?,
        )?)
    })
}

/// Mask of `height * width` values in `[0, 1]`, row-major.
#[no_mangle]
pub unsafe extern "C" fn ds_mask_new(
    height: usize,
    width: usize,
    data: *const f64,
    out: *mut *mut DsMask,
) -> DsStatus {
    guard(|| {
        let n = height
            .checked_mul(width)
            .ok_or_else(|| Error::InvalidDimensions("mask size overflows".into()))?;
        let mask = CodedMask::new(height, width, values(data, n, "data")?.to_vec())?;
        Ok(put(out, DsMask(mask))?)
    })
}

/// Seeded random binary mask.
#[no_mangle]
pub unsafe extern "C" fn ds_mask_random(
    height: usize,
    width: usize,
    seed: u64,
    out: *mut *mut DsMask,
) -> DsStatus {
    guard(|| {
        Ok(put(
            out,
            DsMask(CodedMask::random_binary(height, width, seed)?),
        )?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_mask_free(mask: *mut DsMask) {
    free(mask)
}

/// Measurement of `height * width` row-major values, where `width` is the
/// detector width.
#[no_mangle]
pub unsafe extern "C" fn ds_measurement_new(
    height: usize,
    width: usize,
    shift: usize,
    data: *const f64,
    sigma_n: f64,
    out: *mut *mut DsMeasurement,
) -> DsStatus {
    guard(|| {
        let n = height
            .checked_mul(width)
            .ok_or_else(|| Error::InvalidDimensions("measurement size overflows".into()))?;
        let y = Measurement::new(
            height,
            width,
            shift,
            values(data, n, "data")?.to_vec(),
            sigma_n,
        )?;
        Ok(put(out, DsMeasurement(y))?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_measurement_free(y: *mut DsMeasurement) {
    free(y)
}

#[no_mangle]
pub unsafe extern "C" fn ds_measurement_dims(
    y: *const DsMeasurement,
    height: *mut usize,
    width: *mut usize,
) -> DsStatus {
    guard(|| {
        let m = &borrow(y, "measurement")?.0;
        if !height.is_null() {
            *height = m.height();
        }
        if !width.is_null() {
            *width = m.width();
        }
        Ok(())
    })
}

/// Row-major values, valid while the measurement lives.
#[no_mangle]
pub unsafe extern "C" fn ds_measurement_data(y: *const DsMeasurement) -> *const f64 {
    y.as_ref().map_or(ptr::null(), |m| m.0.data().as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn ds_measurement_read(
    path_utf8: *const c_char,
    out: *mut *mut DsMeasurement,
) -> DsStatus {
    guard(|| {
        let y = diffsci::io::read_measurement(path(path_utf8)?)?;
        Ok(put(out, DsMeasurement(y))?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_measurement_write(
    y: *const DsMeasurement,
    path_utf8: *const c_char,
) -> DsStatus {
    guard(|| {
        Ok(diffsci::io::write_measurement(
            &borrow(y, "measurement")?.0,
            path(path_utf8)?,
        )?)
    })
}

/// Operator for `bands` bands dispersed by `shift` columns per band. The
/// mask is copied; the caller keeps ownership of `mask`.
#[no_mangle]
pub unsafe extern "C" fn ds_operator_new(
    mask: *const DsMask,
    shift: usize,
    bands: usize,
    out: *mut *mut DsOperator,
) -> DsStatus {
    guard(|| {
        let op = CassiOperator::new(borrow(mask, "mask")?.0.clone(), shift, bands)?;
        Ok(put(out, DsOperator(op))?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_operator_free(op: *mut DsOperator) {
    free(op)
}

/// Detector width `W + shift * (bands - 1)`; 0 for a null operator.
#[no_mangle]
pub unsafe extern "C" fn ds_operator_measurement_width(op: *const DsOperator) -> usize {
    op.as_ref().map_or(0, |o| o.0.measurement_width())
}

#[no_mangle]
pub unsafe extern "C" fn ds_operator_apply(
    op: *const DsOperator,
    cube: *const DsCube,
    out: *mut *mut DsMeasurement,
) -> DsStatus {
    guard(|| {
        let y = borrow(op, "operator")?.0.apply(&borrow(cube, "cube")?.0)?;
        Ok(put(out, DsMeasurement(y))?)
    })
}

/// Adjoint; `wavelengths` holds one value per band.
#[no_mangle]
pub unsafe extern "C" fn ds_operator_adjoint(
    op: *const DsOperator,
    y: *const DsMeasurement,
    wavelengths: *const f64,
    out: *mut *mut DsCube,
) -> DsStatus {
    guard(|| {
        let op = &borrow(op, "operator")?.0;
        let wl = values(wavelengths, op.bands(), "wavelengths")?;
        let x = op.adjoint(&borrow(y, "measurement")?.0, wl)?;
        Ok(put(out, DsCube(x))?)
    })
}

/// Forward model plus seeded Gaussian noise of standard deviation `sigma_n`.
#[no_mangle]
pub unsafe extern "C" fn ds_operator_simulate(
    op: *const DsOperator,
    cube: *const DsCube,
    sigma_n: f64,
    seed: u64,
    out: *mut *mut DsMeasurement,
) -> DsStatus {
    guard(|| {
        let y = borrow(op, "operator")?
            .0
            .simulate(&borrow(cube, "cube")?.0, sigma_n, seed)?;
        Ok(put(out, DsMeasurement(y))?)
    })
}

#[no_mangle]
pub extern "C" fn ds_solver_config_default() -> DsSolverConfig {
    let d = SolverConfig::default();
    let p = PlanSpec::default();
    DsSolverConfig {
        lambda: d.lambda,
        zeta: d.zeta,
        guidance_scale: d.guidance_scale,
        t_start: d.t_start as u32,
        step_count: d.step_count as u32,
        seed: d.seed,
        sigma_n: d.sigma_n,
        plan: DsPlanKind::WavelengthMatched,
        anchor_a: -1,
        anchor_b: -1,
        cutoff_nm: p.cutoff_nm,
        accelerate: d.accelerate,
        warm_start: d.warm_start,
        normalize: d.normalize,
    }
}

fn solver_config(c: &DsSolverConfig) -> Result<SolverConfig, Error> {
    let anchors = match (c.anchor_a, c.anchor_b) {
        (a, b) if a >= 0 && b >= 0 => Some((a as usize, b as usize)),
        (a, b) if a < 0 && b < 0 => None,
        (a, b) => {
            return Err(Error::InvalidParameter(format!(
                "anchors ({a}, {b}) must both be set or both be negative"
            )))
        }
    };
    Ok(SolverConfig {
        lambda: c.lambda,
        zeta: c.zeta,
        guidance_scale: c.guidance_scale,
        t_start: c.t_start as usize,
        step_count: c.step_count as usize,
        seed: c.seed,
        sigma_n: c.sigma_n,
        plan: PlanSpec {
            kind: match c.plan {
                DsPlanKind::Partitioned => PlanKind::Partitioned,
                DsPlanKind::Sliding => PlanKind::Sliding,
                DsPlanKind::WavelengthMatched => PlanKind::WavelengthMatched,
            },
            anchors,
            cutoff_nm: c.cutoff_nm,
        },
        accelerate: c.accelerate,
        warm_start: c.warm_start,
        normalize: c.normalize,
    })
}

/// Reconstructs a cube from `y` with a built-in prior and the default
/// diffusion schedule. `truth` is required for the oracle prior and
/// ignored otherwise; `wavelengths` holds one value per band.
#[no_mangle]
pub unsafe extern "C" fn ds_reconstruct(
    op: *const DsOperator,
    y: *const DsMeasurement,
    wavelengths: *const f64,
    config: *const DsSolverConfig,
    prior: DsPriorKind,
    prior_strength: f64,
    truth: *const DsCube,
    out: *mut *mut DsCube,
) -> DsStatus {
    guard(|| {
        let op = &borrow(op, "operator")?.0;
        let wl = values(wavelengths, op.bands(), "wavelengths")?;
        let cfg = solver_config(borrow(config, "config")?)?;
        let prior = match prior {
            DsPriorKind::Identity => PriorKind::Identity,
            DsPriorKind::GaussianShrink => PriorKind::gaussian_shrink(prior_strength)?,
            DsPriorKind::Oracle => {
                PriorKind::Oracle(OracleTruth::Cube(borrow(truth, "truth")?.0.clone()))
            }
        };
        let rec = run_diffsci(
            &cfg,
            &DiffusionSchedule::default(),
            op,
            &borrow(y, "measurement")?.0,
            wl,
            &prior,
            None,
        )?;
        Ok(put(out, DsCube(rec.cube))?)
    })
}

/// Mean per-band PSNR and SSIM of `recon` against `reference`.
#[no_mangle]
pub unsafe extern "C" fn ds_evaluate(
    recon: *const DsCube,
    reference: *const DsCube,
    peak: f64,
    mean_psnr: *mut f64,
    mean_ssim: *mut f64,
) -> DsStatus {
    guard(|| {
        let r = metrics::evaluate(
            &borrow(recon, "recon")?.0,
            &borrow(reference, "reference")?.0,
            peak,
            None,
        )?;
        if !mean_psnr.is_null() {
            *mean_psnr = r.mean_psnr;
        }
        if !mean_ssim.is_null() {
            *mean_ssim = r.mean_ssim;
        }
        Ok(())
    })
}
