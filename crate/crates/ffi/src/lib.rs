//! C interface to trained fgtt checkpoints.
//!
//! Every function returns an [`FgttStatus`]; on failure a description is
//! available from [`fgtt_last_error`] on the same thread. Inputs are rows
//! already encoded the way the checkpoint expects (standardized numerics,
//! one-hot categoricals), row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fgtt::autodiff::Tensor;
use fgtt::data::NUM_CLASSES;
use fgtt::model::Checkpoint;
use fgtt::FgttError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FgttStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Shape = 5,
    Internal = 6,
}

/// Opaque handle to a loaded model.
pub struct FgttModelHandle {
    model: fgtt::model::FgttModel,
    group_names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &FgttError) -> FgttStatus {
    match e {
        FgttError::Io { .. } => FgttStatus::Io,
        FgttError::Checkpoint(_) | FgttError::Json(_) => FgttStatus::Checkpoint,
        FgttError::Shape(_) => FgttStatus::Shape,
        _ => FgttStatus::InvalidArgument,
    }
}

fn guard<F: FnOnce() -> Result<(), (FgttStatus, String)>>(f: F) -> FgttStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FgttStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            FgttStatus::Internal
        }
    }
}

fn core_err(e: FgttError) -> (FgttStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (FgttStatus, String) {
    (FgttStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (FgttStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (FgttStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn read_rows<'a>(
    handle: *const FgttModelHandle,
    x: *const f64,
    rows: usize,
    cols: usize,
) -> Result<(&'a fgtt::model::FgttModel, Tensor), (FgttStatus, String)> {
    let h = handle.as_ref().ok_or_else(|| null("model"))?;
    if x.is_null() {
        return Err(null("input"));
    }
    if rows == 0 {
        return Err((FgttStatus::InvalidArgument, "rows must be positive".into()));
    }
    let width = h.model.input_width();
    if cols != width {
        return Err((FgttStatus::Shape, format!("model expects {width} columns, got {cols}")));
    }
    let n = rows
        .checked_mul(cols)
        .ok_or((FgttStatus::InvalidArgument, "rows * cols overflows".to_string()))?;
    let data = std::slice::from_raw_parts(x, n).to_vec();
    let t = Tensor::new(vec![rows, cols], data).map_err(core_err)?;
    Ok((&h.model, t))
}

fn install(out: *mut *mut FgttModelHandle, ckpt: Checkpoint) -> Result<(), (FgttStatus, String)> {
    let model = ckpt.model().map_err(core_err)?;
    let group_names = model
        .partition()
        .names()
        .into_iter()
        .map(|n| CString::new(n).expect("group names have no NUL"))
        .collect();
    let b = Box::new(FgttModelHandle { model, group_names });
    unsafe { *out = Box::into_raw(b) };
    Ok(())
}

/// Loads a checkpoint file. On success `*out` owns a handle that must be
/// released with [`fgtt_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fgtt_model_load(path: *const c_char, out: *mut *mut FgttModelHandle) -> FgttStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = read_str(path, "path")?;
        let ckpt = Checkpoint::load(Path::new(p), None).map_err(core_err)?;
        install(out, ckpt)
    })
}

/// Parses a checkpoint from its JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fgtt_model_from_json(json: *const c_char, out: *mut *mut FgttModelHandle) -> FgttStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = read_str(json, "json")?;
        let ckpt = Checkpoint::from_json(text, None).map_err(core_err)?;
        install(out, ckpt)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from a load function and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fgtt_model_free(model: *mut FgttModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of encoded input columns.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fgtt_model_input_width(model: *const FgttModelHandle, out: *mut usize) -> FgttStatus {
    guard(|| {
        let h = model.as_ref().ok_or_else(|| null("model"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = h.model.input_width();
        Ok(())
    })
}

/// Number of feature-group tokens (CLS not counted).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fgtt_model_n_groups(model: *const FgttModelHandle, out: *mut usize) -> FgttStatus {
    guard(|| {
        let h = model.as_ref().ok_or_else(|| null("model"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = h.model.partition().len();
        Ok(())
    })
}

/// Name of group `index`, or null when out of range. Owned by the
/// handle.
///
/// # Safety
/// `model` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fgtt_model_group_name(model: *const FgttModelHandle, index: usize) -> *const c_char {
    match model.as_ref().and_then(|h| h.group_names.get(index)) {
        Some(c) => c.as_ptr(),
        None => ptr::null(),
    }
}

/// Class probabilities, `rows × fgtt_num_classes()` written to `out`.
///
/// # Safety
/// `x` must hold `rows * cols` doubles and `out` room for
/// `rows * fgtt_num_classes()`.
#[no_mangle]
pub unsafe extern "C" fn fgtt_model_predict_proba(
    model: *const FgttModelHandle,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> FgttStatus {
    guard(|| {
        let (m, t) = read_rows(model, x, rows, cols)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = m.predict_proba(&t).map_err(core_err)?;
        ptr::copy_nonoverlapping(p.data().as_ptr(), out, p.len());
        Ok(())
    })
}

/// Per-row CLS attention over the groups of the last layer, averaged over
/// heads; `rows × n_groups` values, each row summing to 1.
///
/// # Safety
/// As for [`fgtt_model_predict_proba`], with `out` sized
/// `rows * n_groups`.
#[no_mangle]
pub unsafe extern "C" fn fgtt_model_cls_attention(
    model: *const FgttModelHandle,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> FgttStatus {
    guard(|| {
        let (m, t) = read_rows(model, x, rows, cols)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (_, rec) = m.predict_with_attention(&t).map_err(core_err)?;
        let rec = rec.ok_or((FgttStatus::InvalidArgument, "model has no encoder layers".to_string()))?;
        let g = m.partition().len();
        for i in 0..rows {
            let s = rec.cls_scores(i);
            ptr::copy_nonoverlapping(s.as_ptr(), out.add(i * g), g);
        }
        Ok(())
    })
}

/// Support-weighted F1 of `predicted` against `actual` (class ids).
///
/// # Safety
/// Both arrays must hold `n` entries.
#[no_mangle]
pub unsafe extern "C" fn fgtt_weighted_f1(
    predicted: *const usize,
    actual: *const usize,
    n: usize,
    out: *mut f64,
) -> FgttStatus {
    guard(|| {
        if predicted.is_null() || actual.is_null() {
            return Err(null("labels"));
        }
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        let p = std::slice::from_raw_parts(predicted, n);
        let a = std::slice::from_raw_parts(actual, n);
        *o = fgtt::train::compute_metrics(p, a).map_err(core_err)?.weighted_f1;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn fgtt_num_classes() -> usize {
    NUM_CLASSES
}

/// Message for the most recent failure on this thread; empty after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fgtt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}
