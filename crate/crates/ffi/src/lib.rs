//! C interface to the xtsformer engine.
//!
//! Objects are opaque handles created by `xts_*_build`/`xts_*_load` and
//! released with the matching `xts_*_free`. Fallible functions return an
//! [`XtsStatus`]; on failure a description is available from
//! [`xts_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use xtsformer::events::NormStats;
use xtsformer::hierarchy::ScaleHierarchy;
use xtsformer::model::{count_attention_flops, Checkpoint, Model};
use xtsformer::special;
use xtsformer::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XtsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Mismatch = 6,
    NonFinite = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A trained model restored from a checkpoint.
pub struct XtsModel {
    model: Model,
    norm: Option<NormStats>,
}

/// A multi-scale hierarchy over one sequence of timestamps.
pub struct XtsHierarchy {
    inner: ScaleHierarchy,
}

/// Next-event prediction. Times are in the units of the data the model was
/// trained on.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct XtsPrediction {
    pub predicted_type: usize,
    pub lambda: f64,
    pub shape: f64,
    pub expected_gap: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: XtsStatus, msg: impl Into<String>) -> XtsStatus {
    set_error(msg);
    status
}

fn status_of(err: &Error) -> XtsStatus {
    match err {
        Error::Io { .. } => XtsStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => XtsStatus::Parse,
        Error::Mismatch(_) => XtsStatus::Mismatch,
        Error::NonFinite(_) => XtsStatus::NonFinite,
        Error::Config(_) => XtsStatus::Config,
        _ => XtsStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), XtsStatus>) -> XtsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => XtsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(XtsStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: xtsformer::Result<T>) -> Result<T, XtsStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn slice<'a, T>(data: *const T, len: usize) -> Result<&'a [T], XtsStatus> {
    if len == 0 {
        Ok(&[])
    } else if data.is_null() {
        Err(fail(XtsStatus::NullPointer, "null array pointer"))
    } else {
        Ok(std::slice::from_raw_parts(data, len))
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), XtsStatus> {
    if p.is_null() {
        Err(fail(XtsStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn xts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn xts_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from an `xts_*` function that returns an owned string, or be null.
#[no_mangle]
pub unsafe extern "C" fn xts_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn xts_model_load(path: *const c_char, out: *mut *mut XtsModel) -> XtsStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(XtsStatus::InvalidArgument, "path is not UTF-8"))?;
        let ck = lift(Checkpoint::load(Path::new(path)))?;
        let model = lift(ck.to_model())?;
        *out = Box::into_raw(Box::new(XtsModel { model, norm: ck.norm }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`xts_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn xts_model_free(model: *mut XtsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of event types, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn xts_model_num_types(model: *const XtsModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.cfg.num_types)
}

/// Predicts the event following a history of `len` events. `probs` receives
/// `num_types` type probabilities when non-null.
///
/// # Safety
/// `times` and `types` must point to `len` values; `probs` to `probs_len`
/// values or be null; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn xts_model_predict(
    model: *const XtsModel,
    times: *const f64,
    types: *const usize,
    len: usize,
    probs: *mut f64,
    probs_len: usize,
    out: *mut XtsPrediction,
) -> XtsStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let m = &*model;
        let times = slice(times, len)?;
        let types = slice(types, len)?;
        let k = m.model.cfg.num_types;
        if !probs.is_null() && probs_len < k {
            return Err(fail(
                XtsStatus::BufferTooSmall,
                format!("probability buffer holds {probs_len} values, need {k}"),
            ));
        }
        let scale = m.norm.as_ref().map_or(1.0, |n| n.scale);
        let scaled: Vec<f64> = times.iter().map(|t| t / scale).collect();
        let p = lift(m.model.predict(&scaled, types))?;
        if !probs.is_null() {
            std::slice::from_raw_parts_mut(probs, k).copy_from_slice(&p.probs);
        }
        *out = XtsPrediction {
            predicted_type: p.predicted_type(),
            lambda: p.lambda * scale,
            shape: p.shape,
            expected_gap: p.expected_gap * scale,
        };
        Ok(())
    })
}

unsafe fn hierarchy_out(
    out: *mut *mut XtsHierarchy,
    build: impl FnOnce() -> xtsformer::Result<ScaleHierarchy>,
) -> XtsStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = lift(build())?;
        *out = Box::into_raw(Box::new(XtsHierarchy { inner }));
        Ok(())
    })
}

/// Builds a hierarchy with `num_scales` levels and the default merge split.
///
/// # Safety
/// `times` must point to `len` strictly increasing values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn xts_hierarchy_build(
    times: *const f64,
    len: usize,
    num_scales: usize,
    out: *mut *mut XtsHierarchy,
) -> XtsStatus {
    let times = match slice(times, len) {
        Ok(t) => t,
        Err(s) => return s,
    };
    hierarchy_out(out, || ScaleHierarchy::with_scales(times, num_scales))
}

/// Builds a hierarchy with explicit merge counts per scale interval.
///
/// # Safety
/// `times` must point to `len` values and `counts` to `num_counts` values;
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn xts_hierarchy_build_with_counts(
    times: *const f64,
    len: usize,
    counts: *const usize,
    num_counts: usize,
    out: *mut *mut XtsHierarchy,
) -> XtsStatus {
    let (times, counts) = match (slice(times, len), slice(counts, num_counts)) {
        (Ok(t), Ok(c)) => (t, c),
        (Err(s), _) | (_, Err(s)) => return s,
    };
    hierarchy_out(out, || ScaleHierarchy::build(times, counts))
}

/// # Safety
/// `h` must come from an `xts_hierarchy_build*` function and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn xts_hierarchy_free(h: *mut XtsHierarchy) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of scale levels, or 0 for a null handle.
///
/// # Safety
/// `h` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn xts_hierarchy_num_scales(h: *const XtsHierarchy) -> usize {
    h.as_ref().map_or(0, |h| h.inner.num_scales())
}

/// Number of nodes (leaves and merges), or 0 for a null handle.
///
/// # Safety
/// `h` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn xts_hierarchy_num_nodes(h: *const XtsHierarchy) -> usize {
    h.as_ref().map_or(0, |h| h.inner.nodes().len())
}

/// Node ids in the frontier of scale `scale` (1-based). Writes the frontier
/// size to `written` even when `cap` is too small.
///
/// # Safety
/// `h` must be live, `ids` must hold `cap` values (or be null when `cap` is
/// 0), and `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn xts_hierarchy_frontier(
    h: *const XtsHierarchy,
    scale: usize,
    ids: *mut usize,
    cap: usize,
    written: *mut usize,
) -> XtsStatus {
    guard(|| {
        non_null(h, "hierarchy")?;
        non_null(written, "written")?;
        let h = &(*h).inner;
        if scale == 0 || scale > h.num_scales() {
            return Err(fail(
                XtsStatus::InvalidArgument,
                format!("scale {scale} outside 1..={}", h.num_scales()),
            ));
        }
        let f = h.frontier(scale);
        *written = f.len();
        if cap < f.len() {
            return Err(fail(
                XtsStatus::BufferTooSmall,
                format!("frontier has {} nodes, buffer holds {cap}", f.len()),
            ));
        }
        if !f.is_empty() {
            non_null(ids, "ids")?;
            std::slice::from_raw_parts_mut(ids, f.len()).copy_from_slice(f);
        }
        Ok(())
    })
}

/// JSON description of the hierarchy. Release with [`xts_string_free`].
///
/// # Safety
/// `h` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn xts_hierarchy_to_json(h: *const XtsHierarchy, out: *mut *mut c_char) -> XtsStatus {
    guard(|| {
        non_null(h, "hierarchy")?;
        non_null(out, "out")?;
        let text = (*h).inner.to_json().to_string();
        *out = CString::new(text).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// Negative log density of a Weibull(scale `lambda`, shape `shape`) at `t`.
/// NaN when any argument is not positive.
#[no_mangle]
pub extern "C" fn xts_weibull_nll(lambda: f64, shape: f64, t: f64) -> f64 {
    if lambda > 0.0 && shape > 0.0 && t > 0.0 {
        special::weibull_nll(lambda, shape, t)
    } else {
        f64::NAN
    }
}

/// Mean of a Weibull distribution; NaN when an argument is not positive.
#[no_mangle]
pub extern "C" fn xts_weibull_mean(lambda: f64, shape: f64) -> f64 {
    if lambda > 0.0 && shape > 0.0 {
        special::weibull_mean(lambda, shape)
    } else {
        f64::NAN
    }
}

/// Query-key multiply-adds for cross-scale attention over the given key set
/// sizes, and for dense attention over `len` events.
///
/// # Safety
/// `key_set_sizes` must point to `num_sets` values; the outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn xts_count_attention_flops(
    len: usize,
    batch: usize,
    heads: usize,
    head_dim: usize,
    key_set_sizes: *const usize,
    num_sets: usize,
    cross_out: *mut u64,
    dense_out: *mut u64,
) -> XtsStatus {
    guard(|| {
        non_null(cross_out, "cross_out")?;
        non_null(dense_out, "dense_out")?;
        let sizes = slice(key_set_sizes, num_sets)?;
        let (cross, dense) = count_attention_flops(len, batch, heads, head_dim, sizes);
        *cross_out = cross;
        *dense_out = dense;
        Ok(())
    })
}
