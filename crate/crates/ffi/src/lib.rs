//! C ABI over the tmspace library.
//!
//! Objects are opaque handles created by `*_load` / compute functions and
//! released with the matching `*_free`. Every fallible call returns a
//! `TmsStatus`; on failure `tms_last_error()` describes the most recent error
//! on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use tmspace::attribution::{attribute_probe, AttributionMethod, AttributionMode, AttributionSet, DEFAULT_EXACT_CAP};
use tmspace::model_io::{load_model, ModelSpec};
use tmspace::model_space::{affinity_matrix, pair_score, AffinityMatrix};
use tmspace::probe::{load_probe, sample_probe, ProbeSet};
use tmspace::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TmsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    ProbeMismatch = 6,
    MethodMismatch = 7,
    InvalidArgument = 8,
    Numeric = 9,
    OutOfRange = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TmsMethod {
    Saliency = 0,
    GradientTimesInput = 1,
    EpsilonLrp = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TmsMode {
    SinglePass = 0,
    Exact = 1,
}

pub struct TmsModel {
    inner: ModelSpec,
    id: CString,
}

pub struct TmsProbe {
    inner: ProbeSet,
}

pub struct TmsAttributionSet {
    inner: AttributionSet,
}

pub struct TmsMatrix {
    inner: AffinityMatrix,
    ids: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TmsStatus {
    match e {
        Error::Io { .. } => TmsStatus::Io,
        Error::Parse { .. } | Error::ChecksumMismatch { .. } | Error::Decode { .. } => TmsStatus::Parse,
        Error::ShapeMismatch { .. } | Error::InvalidLayer { .. } | Error::EmptyGraph | Error::UnsupportedChannels { .. } => {
            TmsStatus::Shape
        }
        Error::ProbeMismatch(_) => TmsStatus::ProbeMismatch,
        Error::MethodMismatch(..) => TmsStatus::MethodMismatch,
        Error::NonFiniteValue { .. } | Error::DegenerateSubspace(_) | Error::ZeroVariance(_) => TmsStatus::Numeric,
        Error::UnitOutOfRange { .. } | Error::BadK { .. } | Error::BadSampleSize { .. } | Error::ExactModeTooLarge { .. } => {
            TmsStatus::OutOfRange
        }
        _ => TmsStatus::InvalidArgument,
    }
}

/// Run `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), (TmsStatus, String)>) -> TmsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TmsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TmsStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (TmsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (TmsStatus, String) {
    (TmsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (TmsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (TmsStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (TmsStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tms_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load a model bundle directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tms_model_load(path: *const c_char, out: *mut *mut TmsModel) -> TmsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        let inner = load_model(&path).map_err(lib_err)?;
        let id = CString::new(inner.id.clone()).map_err(|_| (TmsStatus::Parse, "model id contains NUL".into()))?;
        store(out, TmsModel { inner, id });
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from `tms_model_load`, freed once.
#[no_mangle]
pub unsafe extern "C" fn tms_model_free(model: *mut TmsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Model id, owned by the handle.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tms_model_id(model: *const TmsModel) -> *const c_char {
    model.as_ref().map_or(ptr::null(), |m| m.id.as_ptr())
}

/// Representation dimension D, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tms_model_representation_dim(model: *const TmsModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.representation_dim())
}

/// Load a probe set from its JSON manifest.
///
/// # Safety
/// `manifest` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tms_probe_load(manifest: *const c_char, out: *mut *mut TmsProbe) -> TmsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(manifest, "manifest")?;
        let inner = load_probe(&path).map_err(lib_err)?;
        store(out, TmsProbe { inner });
        Ok(())
    })
}

/// Seeded random subset of `n` images, kept in original order.
///
/// # Safety
/// `probe` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tms_probe_sample(probe: *const TmsProbe, n: usize, seed: u64, out: *mut *mut TmsProbe) -> TmsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = handle(probe, "probe")?;
        let inner = sample_probe(&p.inner, n, seed).map_err(lib_err)?;
        store(out, TmsProbe { inner });
        Ok(())
    })
}

/// Number of images, or 0 for a NULL handle.
///
/// # Safety
/// `probe` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tms_probe_len(probe: *const TmsProbe) -> usize {
    probe.as_ref().map_or(0, |p| p.inner.len())
}

/// Writes the 32-byte probe checksum into `out`.
///
/// # Safety
/// `probe` must be a live handle; `out` must point to 32 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn tms_probe_checksum(probe: *const TmsProbe, out: *mut u8) -> TmsStatus {
    guard(|| {
        let p = handle(probe, "probe")?;
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(p.inner.checksum().as_ptr(), out, 32);
        Ok(())
    })
}

/// # Safety
/// `probe` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn tms_probe_free(probe: *mut TmsProbe) {
    if !probe.is_null() {
        drop(Box::from_raw(probe));
    }
}

/// Attribution maps of `model` over every probe image. `method` is a
/// `TmsMethod` and `mode` a `TmsMode` value; `epsilon` is used only for
/// `TMS_METHOD_EPSILON_LRP`.
///
/// # Safety
/// `model` and `probe` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tms_attribute(
    model: *const TmsModel,
    probe: *const TmsProbe,
    method: u32,
    epsilon: f64,
    mode: u32,
    out: *mut *mut TmsAttributionSet,
) -> TmsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = handle(model, "model")?;
        let p = handle(probe, "probe")?;
        let method = match method {
            m if m == TmsMethod::Saliency as u32 => AttributionMethod::Saliency,
            m if m == TmsMethod::GradientTimesInput as u32 => AttributionMethod::GradientTimesInput,
            m if m == TmsMethod::EpsilonLrp as u32 => AttributionMethod::epsilon_lrp(epsilon).map_err(lib_err)?,
            other => return Err((TmsStatus::InvalidArgument, format!("unknown method {other}"))),
        };
        let mode = match mode {
            m if m == TmsMode::SinglePass as u32 => AttributionMode::SinglePass,
            m if m == TmsMode::Exact as u32 => AttributionMode::Exact,
            other => return Err((TmsStatus::InvalidArgument, format!("unknown mode {other}"))),
        };
        let inner = attribute_probe(&m.inner, &p.inner, method, mode, DEFAULT_EXACT_CAP).map_err(lib_err)?;
        store(out, TmsAttributionSet { inner });
        Ok(())
    })
}

/// Forward-and-backward propagations spent computing the set.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tms_attribution_passes(set: *const TmsAttributionSet) -> u64 {
    set.as_ref().map_or(0, |s| s.inner.passes)
}

/// Copy map `index` (probe layout, height x width x channels, row-major)
/// into `out`, which holds `capacity` doubles. `*written` receives the map
/// length even when `capacity` is too small.
///
/// # Safety
/// `set` must be a live handle; `out` must hold `capacity` doubles;
/// `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tms_attribution_map(
    set: *const TmsAttributionSet,
    index: usize,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> TmsStatus {
    guard(|| {
        let s = handle(set, "set")?;
        if written.is_null() {
            return Err(null("written"));
        }
        let map = s
            .inner
            .maps
            .get(index)
            .ok_or_else(|| (TmsStatus::OutOfRange, format!("map {index} of {}", s.inner.len())))?;
        *written = map.len();
        if capacity < map.len() {
            return Err((TmsStatus::OutOfRange, format!("buffer of {capacity} for map of {}", map.len())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(map.data().as_ptr(), out, map.len());
        Ok(())
    })
}

/// # Safety
/// `set` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tms_attribution_write_cache(set: *const TmsAttributionSet, path: *const c_char) -> TmsStatus {
    guard(|| {
        let s = handle(set, "set")?;
        let path = path_arg(path, "path")?;
        s.inner.write_cache(&path).map_err(lib_err)
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tms_attribution_read_cache(path: *const c_char, out: *mut *mut TmsAttributionSet) -> TmsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        let inner = AttributionSet::read_cache(&path).map_err(lib_err)?;
        store(out, TmsAttributionSet { inner });
        Ok(())
    })
}

/// # Safety
/// `set` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn tms_attribution_free(set: *mut TmsAttributionSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Model distance between two attribution sets; `INFINITY` when the cosine
/// sum is not positive.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tms_distance(a: *const TmsAttributionSet, b: *const TmsAttributionSet, out: *mut f64) -> TmsStatus {
    guard(|| {
        let (a, b) = (handle(a, "a")?, handle(b, "b")?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = pair_score(&a.inner, &b.inner).map_err(lib_err)?.distance();
        Ok(())
    })
}

/// Pairwise affinity over `count` sets.
///
/// # Safety
/// `sets` must point to `count` live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tms_affinity(sets: *const *const TmsAttributionSet, count: usize, out: *mut *mut TmsMatrix) -> TmsStatus {
    guard(|| {
        if sets.is_null() {
            return Err(null("sets"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let owned: Vec<AttributionSet> = std::slice::from_raw_parts(sets, count)
            .iter()
            .map(|&p| handle(p, "set").map(|s| s.inner.clone()))
            .collect::<Result<_, _>>()?;
        let inner = affinity_matrix(&owned).map_err(lib_err)?;
        let ids = inner
            .ids
            .iter()
            .map(|id| CString::new(id.as_str()).map_err(|_| (TmsStatus::Parse, "model id contains NUL".to_string())))
            .collect::<Result<_, _>>()?;
        store(out, TmsMatrix { inner, ids });
        Ok(())
    })
}

/// Number of models, or 0 for a NULL handle.
///
/// # Safety
/// `matrix` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tms_matrix_size(matrix: *const TmsMatrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.inner.len())
}

/// Id of row `i`, owned by the handle; NULL when out of range.
///
/// # Safety
/// `matrix` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tms_matrix_id(matrix: *const TmsMatrix, i: usize) -> *const c_char {
    matrix.as_ref().and_then(|m| m.ids.get(i)).map_or(ptr::null(), |c| c.as_ptr())
}

unsafe fn matrix_entry(matrix: *const TmsMatrix, i: usize, j: usize, out: *mut f64, distance: bool) -> TmsStatus {
    guard(|| {
        let m = handle(matrix, "matrix")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let n = m.inner.len();
        if i >= n || j >= n {
            return Err((TmsStatus::OutOfRange, format!("entry ({i}, {j}) of a {n}x{n} matrix")));
        }
        *out = if distance { m.inner.distance(i, j) } else { m.inner.similarity(i, j) };
        Ok(())
    })
}

/// Mean cosine similarity between models `i` and `j`.
///
/// # Safety
/// `matrix` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tms_matrix_similarity(matrix: *const TmsMatrix, i: usize, j: usize, out: *mut f64) -> TmsStatus {
    matrix_entry(matrix, i, j, out, false)
}

/// Distance between models `i` and `j`.
///
/// # Safety
/// `matrix` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tms_matrix_distance(matrix: *const TmsMatrix, i: usize, j: usize, out: *mut f64) -> TmsStatus {
    matrix_entry(matrix, i, j, out, true)
}

/// # Safety
/// `matrix` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn tms_matrix_free(matrix: *mut TmsMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}
