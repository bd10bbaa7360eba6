//! C ABI over `proxy_depth`.
//!
//! Every fallible function returns an `LcStatus`. On failure the message is
//! kept per thread and can be read with `lc_last_error_message`. Objects are
//! opaque handles released with their matching `_free` function; strings
//! returned through out-parameters are released with `lc_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use proxy_depth::geom::{CameraIntrinsics, DepthMap, SegmentMap};
use proxy_depth::io::{read_depth, write_depth, DepthFormat, EncodeParams, IntrinsicsFile, SceneSpec};
use proxy_depth::pipeline::{
    box_proxy, boundary_proxy, check_boundary_with, check_exact_with, BoundaryOptions, BoxOptions, ConditionReport, FootprintMethod,
    ScaleAlignment,
};
use proxy_depth::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Degenerate = 3,
    InvalidScene = 4,
    Decode = 5,
    Validation = 6,
    Io = 7,
    ContractViolation = 8,
    Panic = 9,
}

/// Depth file encodings.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcFormat {
    Pfm = 0,
    Png16 = 1,
    Png8inv = 2,
}

impl From<LcFormat> for DepthFormat {
    fn from(f: LcFormat) -> Self {
        match f {
            LcFormat::Pfm => DepthFormat::Pfm,
            LcFormat::Png16 => DepthFormat::Png16,
            LcFormat::Png8inv => DepthFormat::Png8inv,
        }
    }
}

/// Footprint recovery methods for `LcBoundaryOptions::method`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcFootprintMethod {
    Profile = 0,
    Grid = 1,
}

/// A depth map with its camera.
pub struct LcDepth(DepthMap);

/// An editable scene.
pub struct LcScene(SceneSpec);

/// Options for `lc_boundary_proxy`. Start from `lc_boundary_options_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LcBoundaryOptions {
    /// One of the `LcFootprintMethod` values.
    pub method: u32,
    pub cell_m: f64,
    pub simplify_eps_cells: f64,
    pub include_floor: bool,
    pub include_ceiling: bool,
    pub y_low_percentile: f64,
    pub y_high_percentile: f64,
    /// Background depth; zero or negative picks twice the largest input depth.
    pub far_m: f64,
    pub max_edge_jump: f64,
    pub refine_edges: bool,
    pub split_tol_m: f64,
}

/// Summary of a depth check.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LcCheckResult {
    pub passed: bool,
    pub violation_fraction: f64,
    pub mean_violation_m: f64,
    pub scale: f64,
    pub valid_pixels: usize,
}

impl From<&ConditionReport> for LcCheckResult {
    fn from(r: &ConditionReport) -> Self {
        Self {
            passed: r.passed,
            violation_fraction: r.violation_fraction,
            mean_violation_m: r.mean_violation_m,
            scale: r.scale,
            valid_pixels: r.valid_pixels,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(LcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::Json(_) => LcStatus::InvalidArgument,
            Error::Degenerate(_) => LcStatus::Degenerate,
            Error::InvalidScene(_) => LcStatus::InvalidScene,
            Error::ContractViolation(_) => LcStatus::ContractViolation,
            Error::Decode { .. } => LcStatus::Decode,
            Error::Validation(_) => LcStatus::Validation,
            Error::Io(_) => LcStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LcStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            LcStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(LcStatus::NullPointer, format!("{name} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(LcStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    let c = CString::new(s).map_err(|_| Failure(LcStatus::InvalidArgument, "string contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn lc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Copies `len` depth values (row-major, metres, 0 for missing) into a new map
/// seen by a pinhole camera with the given horizontal field of view.
///
/// # Safety
/// `data` must point to `len` readable floats and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_depth_new(
    width: u32,
    height: u32,
    fov_deg: f64,
    data: *const f32,
    len: usize,
    out: *mut *mut LcDepth,
) -> LcStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let cam = CameraIntrinsics::from_fov(fov_deg, width, height)?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        put(out, LcDepth(DepthMap::new(values, cam)?), "out")
    })
}

/// Reads a PFM or PNG depth file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_depth_read(path: *const c_char, fov_deg: f64, out: *mut *mut LcDepth) -> LcStatus {
    guard(|| {
        let path = PathBuf::from(c_str(path, "path")?);
        let map = read_depth(&path, IntrinsicsFile::Fov { fov_deg })?;
        put(out, LcDepth(map), "out")
    })
}

/// Writes a depth map in the given format.
///
/// # Safety
/// `depth` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lc_depth_write(depth: *const LcDepth, path: *const c_char, format: LcFormat) -> LcStatus {
    guard(|| {
        let depth = borrow(depth, "depth")?;
        let path = PathBuf::from(c_str(path, "path")?);
        write_depth(&path, &depth.0, format.into(), EncodeParams::default())?;
        Ok(())
    })
}

/// Width in pixels, or 0 for NULL.
///
/// # Safety
/// `depth` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_depth_width(depth: *const LcDepth) -> u32 {
    depth.as_ref().map_or(0, |d| d.0.width())
}

/// Height in pixels, or 0 for NULL.
///
/// # Safety
/// `depth` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_depth_height(depth: *const LcDepth) -> u32 {
    depth.as_ref().map_or(0, |d| d.0.height())
}

/// Borrowed row-major values, valid while the handle lives. NULL for NULL.
///
/// # Safety
/// `depth` must be NULL or a live handle; `len` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn lc_depth_data(depth: *const LcDepth, len: *mut usize) -> *const f32 {
    let Some(d) = depth.as_ref() else {
        return ptr::null();
    };
    if !len.is_null() {
        *len = d.0.data().len();
    }
    d.0.data().as_ptr()
}

/// # Safety
/// `depth` must be NULL or a handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lc_depth_free(depth: *mut LcDepth) {
    if !depth.is_null() {
        drop(Box::from_raw(depth));
    }
}

/// Parses and validates a scene document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_scene_from_json(json: *const c_char, out: *mut *mut LcScene) -> LcStatus {
    guard(|| {
        let loaded = SceneSpec::from_slice(c_str(json, "json")?.as_bytes())?;
        put(out, LcScene(loaded.scene), "out")
    })
}

/// Canonical JSON of a scene, released with `lc_string_free`.
///
/// # Safety
/// `scene` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_scene_to_json(scene: *const LcScene, out: *mut *mut c_char) -> LcStatus {
    guard(|| {
        let scene = borrow(scene, "scene")?;
        let text = String::from_utf8(scene.0.to_canonical_bytes()).expect("JSON is UTF-8");
        put_string(out, text, "out")
    })
}

/// Renders a scene at its own resolution, or at `width` x `height` when both
/// are non-zero.
///
/// # Safety
/// `scene` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_scene_render(scene: *const LcScene, width: u32, height: u32, out: *mut *mut LcDepth) -> LcStatus {
    guard(|| {
        let scene = borrow(scene, "scene")?;
        let size = (width > 0 && height > 0).then_some((width, height));
        put(out, LcDepth(scene.0.render_depth(size)?), "out")
    })
}

/// # Safety
/// `scene` must be NULL or a handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lc_scene_free(scene: *mut LcScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

#[no_mangle]
pub extern "C" fn lc_boundary_options_default() -> LcBoundaryOptions {
    let d = BoundaryOptions::default();
    LcBoundaryOptions {
        method: match d.method {
            FootprintMethod::Profile => LcFootprintMethod::Profile as u32,
            FootprintMethod::Grid => LcFootprintMethod::Grid as u32,
        },
        cell_m: d.cell_m,
        simplify_eps_cells: d.simplify_eps_cells,
        include_floor: d.include_floor,
        include_ceiling: d.include_ceiling,
        y_low_percentile: d.y_percentiles.0,
        y_high_percentile: d.y_percentiles.1,
        far_m: d.far_m.unwrap_or(0.0),
        max_edge_jump: d.max_edge_jump,
        refine_edges: d.refine_edges,
        split_tol_m: d.split_tol_m,
    }
}

/// Extracts the room boundary condition and its editable scene.
/// `options` may be NULL for defaults.
///
/// # Safety
/// Handles must be live and both out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn lc_boundary_proxy(
    depth: *const LcDepth,
    options: *const LcBoundaryOptions,
    out_condition: *mut *mut LcDepth,
    out_scene: *mut *mut LcScene,
) -> LcStatus {
    guard(|| {
        let depth = borrow(depth, "depth")?;
        if out_condition.is_null() || out_scene.is_null() {
            return Err(null("out_condition or out_scene"));
        }
        let o = options.as_ref().copied().unwrap_or_else(|| lc_boundary_options_default());
        let method = match o.method {
            m if m == LcFootprintMethod::Profile as u32 => FootprintMethod::Profile,
            m if m == LcFootprintMethod::Grid as u32 => FootprintMethod::Grid,
            m => return Err(Failure(LcStatus::InvalidArgument, format!("unknown footprint method {m}"))),
        };
        let opts = BoundaryOptions {
            method,
            cell_m: o.cell_m,
            simplify_eps_cells: o.simplify_eps_cells,
            include_floor: o.include_floor,
            include_ceiling: o.include_ceiling,
            y_percentiles: (o.y_low_percentile, o.y_high_percentile),
            far_m: (o.far_m > 0.0).then_some(o.far_m),
            max_edge_jump: o.max_edge_jump,
            refine_edges: o.refine_edges,
            split_tol_m: o.split_tol_m,
        };
        let r = boundary_proxy(&depth.0, &opts)?;
        put(out_condition, LcDepth(r.condition), "out_condition")?;
        put(out_scene, LcScene(r.scene), "out_scene")
    })
}

/// Fits one box per segment label and renders the box condition. Fitted and
/// skipped segments are reported as JSON in `out_boxes_json`, released with
/// `lc_string_free`. A `min_mask_area` of 0 uses the default.
///
/// # Safety
/// `labels` must point to `len` readable values; handles must be live and
/// out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn lc_box_proxy(
    depth: *const LcDepth,
    labels: *const u32,
    len: usize,
    min_mask_area: usize,
    out_condition: *mut *mut LcDepth,
    out_boxes_json: *mut *mut c_char,
) -> LcStatus {
    guard(|| {
        let depth = borrow(depth, "depth")?;
        if labels.is_null() {
            return Err(null("labels"));
        }
        if out_condition.is_null() || out_boxes_json.is_null() {
            return Err(null("out_condition or out_boxes_json"));
        }
        let segs = SegmentMap::new(
            depth.0.width(),
            depth.0.height(),
            std::slice::from_raw_parts(labels, len).to_vec(),
        )?;
        let mut opts = BoxOptions::default();
        if min_mask_area > 0 {
            opts.min_mask_area = min_mask_area;
        }
        let r = box_proxy(&depth.0, &segs, &opts)?;
        let json = serde_json::to_string(&r.boxes_json()).map_err(Error::from)?;
        put_string(out_boxes_json, json, "out_boxes_json")?;
        put(out_condition, LcDepth(r.condition), "out_condition")
    })
}

/// Exact check: passes when the median-aligned mean relative error is at
/// most `tau_rel`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lc_check_exact(
    gen: *const LcDepth,
    cond: *const LcDepth,
    tau_rel: f64,
    out: *mut LcCheckResult,
) -> LcStatus {
    guard(|| {
        let (gen, cond) = (borrow(gen, "gen")?, borrow(cond, "cond")?);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = (&check_exact_with(&gen.0, &cond.0, tau_rel, ScaleAlignment::MedianRatio)?).into();
        Ok(())
    })
}

/// Boundary check: passes when at most `eta` of the pixels lie beyond the
/// condition by more than `tau_rel` relative depth.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lc_check_boundary(
    gen: *const LcDepth,
    cond: *const LcDepth,
    tau_rel: f64,
    eta: f64,
    out: *mut LcCheckResult,
) -> LcStatus {
    guard(|| {
        let (gen, cond) = (borrow(gen, "gen")?, borrow(cond, "cond")?);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = (&check_boundary_with(&gen.0, &cond.0, tau_rel, eta, ScaleAlignment::None)?).into();
        Ok(())
    })
}
