//! C interface to `mqreid-core`.
//!
//! Models and galleries are opaque handles created by `*_load` functions and
//! released with the matching `*_free`. Every fallible function returns an
//! [`MqStatus`]; on failure, [`mq_last_error`] describes what went wrong on
//! the calling thread. Feature buffers are row-major `double` arrays.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mqreid_core::cvfr::CvfrModel;
use mqreid_core::inference::{score_multi, FeatureRecord, Gallery, InferenceOptions, QuerySet};
use mqreid_core::io::{load_cvfr, load_features, load_vcc};
use mqreid_core::metrics::{average_precision, cmc_at_k, csp, inp, JudgedItem, ViewpointSimilarity};
use mqreid_core::vcc::VccModel;
use mqreid_core::{Error, ErrorKind, Viewpoint};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MqStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    InvalidArgument = 1,
    /// Bad configuration value.
    Usage = 2,
    /// Malformed or inconsistent input data.
    Data = 3,
    /// Model missing, unreadable or incompatible with the input.
    Model = 4,
    /// An output buffer is smaller than required.
    BufferTooSmall = 5,
    /// The library panicked; this is a bug.
    Internal = 6,
}

/// Embedding model handle.
pub struct MqVcc(VccModel);

/// Missing-viewpoint recovery model handle.
pub struct MqCvfr(CvfrModel);

/// Gallery of feature records handle.
pub struct MqGallery(Gallery);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: MqStatus, msg: impl Into<String>) -> MqStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> MqStatus {
    let status = match e.kind() {
        ErrorKind::Usage => MqStatus::Usage,
        ErrorKind::Data => MqStatus::Data,
        ErrorKind::Model => MqStatus::Model,
    };
    fail(status, e.to_string())
}

/// Run `f`, turning panics into [`MqStatus::Internal`].
fn guard(f: impl FnOnce() -> Result<(), MqStatus>) -> MqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MqStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(MqStatus::Internal, "panic inside mqreid"),
    }
}

fn lift<T>(r: mqreid_core::Result<T>) -> Result<T, MqStatus> {
    r.map_err(from_error)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, MqStatus> {
    if p.is_null() {
        return Err(fail(MqStatus::InvalidArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MqStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], MqStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(MqStatus::InvalidArgument, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, MqStatus> {
    p.as_mut()
        .ok_or_else(|| fail(MqStatus::InvalidArgument, format!("{what} is null")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, MqStatus> {
    p.as_ref()
        .ok_or_else(|| fail(MqStatus::InvalidArgument, format!("{what} handle is null")))
}

fn view_arg(v: c_int) -> Result<Viewpoint, MqStatus> {
    usize::try_from(v)
        .ok()
        .and_then(Viewpoint::from_index)
        .ok_or_else(|| fail(MqStatus::InvalidArgument, format!("viewpoint {v} is not 0 (front), 1 (side) or 2 (rear)")))
}

/// Message for the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

// ---------------------------------------------------------------- models

/// Load an embedding model from its JSON document.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mq_vcc_load(path: *const c_char, out: *mut *mut MqVcc) -> MqStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = lift(load_vcc(Path::new(str_arg(path, "path")?)))?;
        *out = Box::into_raw(Box::new(MqVcc(model)));
        Ok(())
    })
}

/// # Safety
/// `vcc` must come from [`mq_vcc_load`] and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn mq_vcc_free(vcc: *mut MqVcc) {
    if !vcc.is_null() {
        drop(Box::from_raw(vcc));
    }
}

/// Input, appearance and viewpoint feature sizes of the model.
///
/// # Safety
/// `vcc` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn mq_vcc_dims(
    vcc: *const MqVcc,
    input_dim: *mut usize,
    appearance_dim: *mut usize,
    viewpoint_dim: *mut usize,
) -> MqStatus {
    guard(|| {
        let m = &handle(vcc, "vcc")?.0;
        *out_arg(input_dim, "input_dim")? = m.input_dim();
        *out_arg(appearance_dim, "appearance_dim")? = m.appearance_dim();
        *out_arg(viewpoint_dim, "viewpoint_dim")? = m.viewpoint_dim();
        Ok(())
    })
}

/// Embed one input vector into unit-norm appearance and viewpoint features
/// and report the predicted viewpoint (0 front, 1 side, 2 rear).
///
/// # Safety
/// Buffers must hold at least the given number of doubles; `viewpoint` may
/// be null.
#[no_mangle]
pub unsafe extern "C" fn mq_vcc_embed(
    vcc: *const MqVcc,
    input: *const f64,
    input_len: usize,
    appearance_out: *mut f64,
    appearance_len: usize,
    viewpoint_out: *mut f64,
    viewpoint_len: usize,
    viewpoint: *mut c_int,
) -> MqStatus {
    guard(|| {
        let m = &handle(vcc, "vcc")?.0;
        let x = slice_arg(input, input_len, "input")?;
        if appearance_len < m.appearance_dim() || viewpoint_len < m.viewpoint_dim() {
            return Err(fail(
                MqStatus::BufferTooSmall,
                format!("need {} appearance and {} viewpoint slots", m.appearance_dim(), m.viewpoint_dim()),
            ));
        }
        if appearance_out.is_null() || viewpoint_out.is_null() {
            return Err(fail(MqStatus::InvalidArgument, "feature output is null"));
        }
        let e = lift(m.embed(x))?;
        ptr::copy_nonoverlapping(e.appearance.as_ptr(), appearance_out, e.appearance.len());
        ptr::copy_nonoverlapping(e.viewpoint.as_ptr(), viewpoint_out, e.viewpoint.len());
        if let Some(v) = viewpoint.as_mut() {
            *v = lift(m.predict_viewpoint(x))?.0.index() as c_int;
        }
        Ok(())
    })
}

/// Load a recovery model from its JSON document.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mq_cvfr_load(path: *const c_char, out: *mut *mut MqCvfr) -> MqStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = lift(load_cvfr(Path::new(str_arg(path, "path")?)))?;
        *out = Box::into_raw(Box::new(MqCvfr(model)));
        Ok(())
    })
}

/// # Safety
/// `cvfr` must come from [`mq_cvfr_load`] and not be used afterwards. Null
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn mq_cvfr_free(cvfr: *mut MqCvfr) {
    if !cvfr.is_null() {
        drop(Box::from_raw(cvfr));
    }
}

/// Recover the appearance feature of `missing` from one available view.
///
/// # Safety
/// `feature` holds `len` doubles, `out` holds `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mq_cvfr_recover(
    cvfr: *const MqCvfr,
    from: c_int,
    feature: *const f64,
    len: usize,
    missing: c_int,
    out: *mut f64,
    out_len: usize,
) -> MqStatus {
    guard(|| {
        let m = &handle(cvfr, "cvfr")?.0;
        let x = slice_arg(feature, len, "feature")?;
        let (from, missing) = (view_arg(from)?, view_arg(missing)?);
        if out_len < m.appearance_dim() {
            return Err(fail(MqStatus::BufferTooSmall, format!("need {} output slots", m.appearance_dim())));
        }
        if out.is_null() {
            return Err(fail(MqStatus::InvalidArgument, "out is null"));
        }
        let r = lift(m.recover_from(from, x, missing))?;
        ptr::copy_nonoverlapping(r.as_ptr(), out, r.len());
        Ok(())
    })
}

// ---------------------------------------------------------------- ranking

/// Load a gallery from a feature file (JSONL or binary cache).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mq_gallery_load(path: *const c_char, out: *mut *mut MqGallery) -> MqStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let records = lift(load_features(Path::new(str_arg(path, "path")?)))?;
        *out = Box::into_raw(Box::new(MqGallery(lift(Gallery::new(records))?)));
        Ok(())
    })
}

/// # Safety
/// `gallery` must come from [`mq_gallery_load`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mq_gallery_free(gallery: *mut MqGallery) {
    if !gallery.is_null() {
        drop(Box::from_raw(gallery));
    }
}

/// Number of records in the gallery (0 for a null handle).
///
/// # Safety
/// `gallery` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mq_gallery_len(gallery: *const MqGallery) -> usize {
    gallery.as_ref().map_or(0, |g| g.0.len())
}

/// Copy the record id of gallery entry `index` into `buf` as a
/// NUL-terminated string. `needed` receives the size including the NUL.
///
/// # Safety
/// `buf` holds `buf_len` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn mq_gallery_record_id(
    gallery: *const MqGallery,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> MqStatus {
    guard(|| {
        let g = &handle(gallery, "gallery")?.0;
        let Some(r) = g.records().get(index) else {
            return Err(fail(MqStatus::InvalidArgument, format!("index {index} out of range for {} records", g.len())));
        };
        let id = r.record_id.as_bytes();
        if let Some(n) = needed.as_mut() {
            *n = id.len() + 1;
        }
        if buf_len < id.len() + 1 || buf.is_null() {
            return Err(fail(MqStatus::BufferTooSmall, format!("record id needs {} bytes", id.len() + 1)));
        }
        ptr::copy_nonoverlapping(id.as_ptr().cast(), buf, id.len());
        *buf.add(id.len()) = 0;
        Ok(())
    })
}

/// One query record of a multi-query set.
#[repr(C)]
pub struct MqQuery {
    /// 0 front, 1 side, 2 rear. Each viewpoint may appear once per set.
    pub viewpoint: c_int,
    /// Camera the query was taken by; used by the junk filter. May be null.
    pub camera_id: *const c_char,
    pub appearance: *const f64,
    pub viewpoint_feature: *const f64,
}

/// Rank the gallery for a multi-query set with viewpoint-aware fusion.
///
/// Viewpoints missing from the set are recovered with `cvfr`, which may be
/// null when all three are present. With `vehicle_id` non-null and
/// `junk_filter` non-zero, gallery records of the same vehicle seen by a
/// query camera are excluded. Up to `capacity` results are written in
/// descending score order; `out_len` receives the number written.
///
/// # Safety
/// `queries` holds `num_queries` entries whose feature pointers hold
/// gallery-sized vectors; outputs hold `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn mq_rank_multi(
    gallery: *const MqGallery,
    cvfr: *const MqCvfr,
    queries: *const MqQuery,
    num_queries: usize,
    vehicle_id: *const c_char,
    junk_filter: c_int,
    out_indices: *mut usize,
    out_scores: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> MqStatus {
    guard(|| {
        let g = &handle(gallery, "gallery")?.0;
        let cvfr = cvfr.as_ref().map(|c| &c.0);
        let qs = slice_arg(queries, num_queries, "queries")?;
        let out_len = out_arg(out_len, "out_len")?;
        let vehicle = if vehicle_id.is_null() { None } else { Some(str_arg(vehicle_id, "vehicle_id")?) };
        let mut records = Vec::with_capacity(qs.len());
        for (i, q) in qs.iter().enumerate() {
            let camera = if q.camera_id.is_null() { "" } else { str_arg(q.camera_id, "camera_id")? };
            records.push(FeatureRecord {
                record_id: format!("query-{i}"),
                vehicle_id: vehicle.unwrap_or("").to_string(),
                camera_id: camera.to_string(),
                viewpoint: view_arg(q.viewpoint)?,
                appearance: slice_arg(q.appearance, g.appearance_dim(), "appearance")?.to_vec(),
                viewpoint_feature: slice_arg(q.viewpoint_feature, g.viewpoint_dim(), "viewpoint_feature")?.to_vec(),
            });
        }
        let set = lift(QuerySet::new(records))?;
        let options = InferenceOptions {
            junk_filter: junk_filter != 0 && vehicle.is_some(),
            ..Default::default()
        };
        let ranked = lift(score_multi(&set, g, cvfr, &options))?;
        let n = ranked.indices.len().min(capacity);
        if n > 0 && (out_indices.is_null() || out_scores.is_null()) {
            return Err(fail(MqStatus::InvalidArgument, "output buffer is null"));
        }
        ptr::copy_nonoverlapping(ranked.indices.as_ptr(), out_indices, n);
        ptr::copy_nonoverlapping(ranked.scores.as_ptr(), out_scores, n);
        *out_len = n;
        Ok(())
    })
}

// ---------------------------------------------------------------- metrics

/// Per-position judgement of a ranked list for the metric functions.
#[repr(C)]
pub struct MqJudged {
    pub positive: c_int,
    pub camera_id: *const c_char,
    pub viewpoint: c_int,
    /// `viewpoint_dim` doubles; read for the cross-scene precision.
    pub viewpoint_feature: *const f64,
}

/// Metric values of one ranked list. Fields that need a positive are NaN
/// when the list has none.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MqListMetrics {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub average_precision: f64,
    pub inverse_negative_penalty: f64,
    pub cross_scene_precision: f64,
}

/// Rank-k hits, AP, INP and cross-scene precision for one ranked list.
/// Same-camera positives whose viewpoint features lie closer than
/// `epsilon` count once in the cross-scene precision.
///
/// # Safety
/// `items` holds `len` entries, each with a NUL-terminated camera id and a
/// `viewpoint_dim`-double feature.
#[no_mangle]
pub unsafe extern "C" fn mq_list_metrics(
    items: *const MqJudged,
    len: usize,
    viewpoint_dim: usize,
    epsilon: f64,
    out: *mut MqListMetrics,
) -> MqStatus {
    guard(|| {
        let items = slice_arg(items, len, "items")?;
        let out = out_arg(out, "out")?;
        let mut list = Vec::with_capacity(items.len());
        for it in items {
            list.push(JudgedItem {
                positive: it.positive != 0,
                camera_id: str_arg(it.camera_id, "camera_id")?,
                viewpoint: view_arg(it.viewpoint)?,
                viewpoint_feature: slice_arg(it.viewpoint_feature, viewpoint_dim, "viewpoint_feature")?,
            });
        }
        if !(epsilon > 0.0) {
            return Err(fail(MqStatus::Usage, "epsilon must be positive"));
        }
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        *out = MqListMetrics {
            rank1: lift(cmc_at_k(&list, 1))?,
            rank5: lift(cmc_at_k(&list, 5))?,
            rank10: lift(cmc_at_k(&list, 10))?,
            average_precision: nan(average_precision(&list)),
            inverse_negative_penalty: nan(inp(&list)),
            cross_scene_precision: nan(csp(&list, epsilon, ViewpointSimilarity::Feature)),
        };
        Ok(())
    })
}
