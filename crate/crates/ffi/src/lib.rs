//! C interface to spatial-design.
//!
//! Every function returns an `SdStatus`; results go through out-pointers.
//! On failure `sd_last_error_message` describes the most recent error on
//! the calling thread. Handles are opaque and must be released with their
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use spatial_design::covariance::{assemble_sigma, CovParams, CovSpec};
use spatial_design::network::StreamNetwork;
use spatial_design::search::{ace_p, wilcoxon_p};
use spatial_design::service::{parse_fix, SurfaceFile};
use spatial_design::utility::kl_gaussian;
use spatial_design::windows::EfficiencySurface;
use spatial_design::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownSite = 3,
    Disconnected = 4,
    NotPositiveDefinite = 5,
    OutOfDomain = 6,
    UnknownWindow = 7,
    MissingFile = 8,
    Io = 9,
    Parse = 10,
    Panic = 11,
}

/// Covariance parameters; a component with zero sill is left out.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SdCovParams {
    pub tail_up_sill: f64,
    pub tail_up_range: f64,
    pub tail_down_sill: f64,
    pub tail_down_range: f64,
    pub euclidean_sill: f64,
    pub euclidean_range: f64,
    pub nugget: f64,
}

/// Opaque stream network.
pub struct SdNetwork(StreamNetwork);

/// Opaque efficiency surface.
pub struct SdSurface(EfficiencySurface);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SdStatus {
    match e {
        Error::UnknownSite(_) | Error::UnknownSegment(_) => SdStatus::UnknownSite,
        Error::Disconnected(..) => SdStatus::Disconnected,
        Error::NotPositiveDefinite(_) => SdStatus::NotPositiveDefinite,
        Error::OutOfDomain { .. } => SdStatus::OutOfDomain,
        Error::UnknownWindow(_) => SdStatus::UnknownWindow,
        Error::MissingFile(_) => SdStatus::MissingFile,
        Error::Io { .. } => SdStatus::Io,
        Error::Csv(_) | Error::Json(_) => SdStatus::Parse,
        _ => SdStatus::InvalidArgument,
    }
}

/// Runs `f`, turning errors and panics into a status and a message.
fn guard<F: FnOnce() -> Result<(), (SdStatus, String)>>(f: F) -> SdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SdStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            SdStatus::Panic
        }
    }
}

fn lib<T>(r: spatial_design::Result<T>) -> Result<T, (SdStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (SdStatus, String) {
    (SdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SdStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (SdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (SdStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), (SdStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = v;
    Ok(())
}

unsafe fn net_ref<'a>(net: *const SdNetwork) -> Result<&'a StreamNetwork, (SdStatus, String)> {
    net.as_ref().map(|n| &n.0).ok_or_else(|| null("network"))
}

unsafe fn surface_ref<'a>(s: *const SdSurface) -> Result<&'a EfficiencySurface, (SdStatus, String)> {
    s.as_ref().map(|s| &s.0).ok_or_else(|| null("surface"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn sd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a network from edge and site CSV files.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_network_load(edges: *const c_char, sites: *const c_char, out: *mut *mut SdNetwork) -> SdStatus {
    guard(|| {
        let e = str_arg(edges, "edges path")?;
        let s = str_arg(sites, "sites path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let net = lib(StreamNetwork::from_csv_paths(Path::new(e), Path::new(s)))?;
        *out = Box::into_raw(Box::new(SdNetwork(net)));
        Ok(())
    })
}

/// # Safety
/// `net` must come from `sd_network_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sd_network_free(net: *mut SdNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sd_network_site_count(net: *const SdNetwork, out: *mut usize) -> SdStatus {
    guard(|| write_out(out, net_ref(net)?.sites().len(), "out"))
}

/// Stream distance between two sites.
///
/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sd_hydrologic_distance(net: *const SdNetwork, a: u64, b: u64, out: *mut f64) -> SdStatus {
    guard(|| write_out(out, lib(net_ref(net)?.hydrologic_distance(a, b))?, "out"))
}

/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sd_flow_connected(net: *const SdNetwork, a: u64, b: u64, out: *mut bool) -> SdStatus {
    guard(|| write_out(out, lib(net_ref(net)?.flow_connected(a, b))?, "out"))
}

/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sd_tailup_weight(net: *const SdNetwork, a: u64, b: u64, out: *mut f64) -> SdStatus {
    guard(|| write_out(out, lib(net_ref(net)?.tailup_weight(a, b))?, "out"))
}

fn cov_spec(p: &SdCovParams) -> CovSpec {
    let part = |sill: f64, range: f64| (sill != 0.0).then(|| CovParams::new(sill, range));
    CovSpec {
        tail_up: part(p.tail_up_sill, p.tail_up_range),
        tail_down: part(p.tail_down_sill, p.tail_down_range),
        euclidean: part(p.euclidean_sill, p.euclidean_range),
        nugget: p.nugget,
        ..CovSpec::default()
    }
}

/// Response covariance of `n` sites, written row-major into `out` (`n * n`).
///
/// # Safety
/// `sites` must hold `n` ids, `params` must be valid and `out` must hold
/// `n * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn sd_covariance_matrix(
    net: *const SdNetwork,
    sites: *const u64,
    n: usize,
    params: *const SdCovParams,
    out: *mut f64,
) -> SdStatus {
    guard(|| {
        let net = net_ref(net)?;
        let ids = slice_arg(sites, n, "sites")?;
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let sigma = lib(assemble_sigma(net, ids, &cov_spec(p)))?;
        let dst = std::slice::from_raw_parts_mut(out, n * n);
        for i in 0..n {
            for j in 0..n {
                dst[i * n + j] = sigma[(i, j)];
            }
        }
        Ok(())
    })
}

/// KL divergence of `N(mu1, s1)` from `N(mu0, s0)` in `k` dimensions;
/// matrices are row-major.
///
/// # Safety
/// Vectors must hold `k` and matrices `k * k` doubles.
#[no_mangle]
pub unsafe extern "C" fn sd_kl_gaussian(
    k: usize,
    mu0: *const f64,
    s0: *const f64,
    mu1: *const f64,
    s1: *const f64,
    out: *mut f64,
) -> SdStatus {
    guard(|| {
        let m0 = DVector::from_column_slice(slice_arg(mu0, k, "mu0")?);
        let m1 = DVector::from_column_slice(slice_arg(mu1, k, "mu1")?);
        let a = DMatrix::from_row_slice(k, k, slice_arg(s0, k * k, "s0")?);
        let b = DMatrix::from_row_slice(k, k, slice_arg(s1, k * k, "s1")?);
        write_out(out, lib(kl_gaussian(&m0, &a, &m1, &b))?, "out")
    })
}

/// One-sided rank-sum p-value for `x` shifted to the right of `y`.
///
/// # Safety
/// `x` and `y` must hold `nx` and `ny` doubles.
#[no_mangle]
pub unsafe extern "C" fn sd_wilcoxon_p(x: *const f64, nx: usize, y: *const f64, ny: usize, out: *mut f64) -> SdStatus {
    guard(|| write_out(out, lib(wilcoxon_p(slice_arg(x, nx, "x")?, slice_arg(y, ny, "y")?))?, "out"))
}

/// Approximate-coordinate-exchange acceptance probability for `n` paired draws.
///
/// # Safety
/// `x` and `y` must hold `n` doubles each.
#[no_mangle]
pub unsafe extern "C" fn sd_ace_p(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> SdStatus {
    guard(|| write_out(out, lib(ace_p(slice_arg(x, n, "x")?, slice_arg(y, n, "y")?))?, "out"))
}

/// Loads a surface file written by the `windows` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sd_surface_load(path: *const c_char, out: *mut *mut SdSurface) -> SdStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let f = lib(SurfaceFile::read(Path::new(p)))?;
        *out = Box::into_raw(Box::new(SdSurface(f.surface)));
        Ok(())
    })
}

/// # Safety
/// `s` must come from `sd_surface_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sd_surface_free(s: *mut SdSurface) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sd_surface_window_count(s: *const SdSurface, out: *mut usize) -> SdStatus {
    guard(|| write_out(out, surface_ref(s)?.q(), "out"))
}

/// Efficiency at the global argmax, and its index.
///
/// # Safety
/// `s` must be a live handle; the out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_surface_argmax(s: *const SdSurface, index: *mut usize, eff: *mut f64) -> SdStatus {
    guard(|| {
        let s = surface_ref(s)?;
        write_out(index, s.argmax, "index")?;
        write_out(eff, s.eff[s.argmax], "eff")
    })
}

/// Conditional slice for `fix` (`name:value,...`) as a JSON string, plus
/// the retained efficiency. Release the string with `sd_string_free`.
///
/// # Safety
/// `s` must be a live handle, `fix` a NUL-terminated string and the
/// out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn sd_surface_slice(s: *const SdSurface, fix: *const c_char, json: *mut *mut c_char, retained: *mut f64) -> SdStatus {
    guard(|| {
        let s = surface_ref(s)?;
        let fixed = lib(parse_fix(str_arg(fix, "fix")?))?;
        if json.is_null() {
            return Err(null("json"));
        }
        let slice = lib(s.conditional_slice(&fixed))?;
        let text = serde_json::to_string(&slice).map_err(|e| (SdStatus::Parse, e.to_string()))?;
        write_out(retained, slice.retained, "retained")?;
        *json = CString::new(text).map_err(|e| (SdStatus::Parse, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `p` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sd_string_free(p: *mut c_char) {
    if !p.is_null() {
        drop(CString::from_raw(p));
    }
}
