//! C ABI over the blockdrop core: opaque model handles, integer status
//! codes, and a thread-local error message.
//!
//! Conventions. Every fallible function returns [`BdStatus`] and reports
//! results through out-pointers; `BD_OK` is zero. On failure the
//! out-pointers are left untouched and a message is stored per thread,
//! readable via [`bd_last_error`] until the next failing call on that
//! thread. Handles are created by exactly one constructor and released by
//! [`bd_model_free`]; passing a freed or foreign pointer is undefined
//! behavior, same as any C library. Panics never unwind across the
//! boundary: they are caught and surfaced as `BD_ERR_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use blockdrop::compress;
use blockdrop::error::Error;
use blockdrop::network::{checkpoint, BlockId, Model};
use blockdrop::practise::{measure_latency, LatencyCfg};
use blockdrop::tensor::Tensor;

/// Status code returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BdStatus {
    /// Success.
    BdOk = 0,
    /// A required pointer argument was null.
    BdErrNullArgument = 1,
    /// Rejected input: bad path encoding, unknown block, zero trials, ...
    BdErrInvalidArgument = 2,
    /// Dimension mismatch between a buffer and the model.
    BdErrShape = 3,
    /// Filesystem or serialization failure.
    BdErrIo = 4,
    /// A bug tripped an internal invariant; the handle is still valid.
    BdErrInternal = 5,
}

/// Opaque model handle. The definition is private to the Rust side.
pub struct BdModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    // Interior NULs would truncate the C string; map them to spaces.
    let clean: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    let c = CString::new(clean).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: BdStatus, msg: &str) -> BdStatus {
    set_error(msg);
    status
}

fn fail_err(err: &Error) -> BdStatus {
    let status = match err {
        Error::Config(_) | Error::InvalidArg(_) | Error::Parse { .. } => {
            BdStatus::BdErrInvalidArgument
        }
        Error::Shape(_) | Error::Invariant(_) => BdStatus::BdErrShape,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => BdStatus::BdErrIo,
    };
    fail(status, &err.to_string())
}

/// Runs `f` with panics converted to `BD_ERR_INTERNAL`.
fn guarded<F: FnOnce() -> BdStatus>(f: F) -> BdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            fail(BdStatus::BdErrInternal, &format!("internal panic: {msg}"))
        }
    }
}

/// Checks a required pointer, returning early from the surrounding
/// function with `BD_ERR_NULL_ARGUMENT` when it is null.
macro_rules! require {
    ($ptr:expr) => {
        if $ptr.is_null() {
            return fail(
                BdStatus::BdErrNullArgument,
                concat!(stringify!($ptr), " must not be null"),
            );
        }
    };
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, BdStatus> {
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(fail(BdStatus::BdErrInvalidArgument, "path is not valid UTF-8")),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message from the last failing call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a model checkpoint from a JSON file written by `bd_model_save`
/// or by the `blockdrop` CLI. On success `*out` owns the new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bd_model_load(path: *const c_char, out: *mut *mut BdModel) -> BdStatus {
    require!(path);
    require!(out);
    guarded(|| {
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match checkpoint::load(path) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(BdModel { inner: model }));
                BdStatus::BdOk
            }
            Err(e) => fail_err(&e),
        }
    })
}

/// Writes the model to a JSON checkpoint. Parameters survive a
/// save/load round trip bit for bit.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bd_model_save(model: *const BdModel, path: *const c_char) -> BdStatus {
    require!(model);
    require!(path);
    guarded(|| {
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match checkpoint::save(&(*model).inner, path) {
            Ok(()) => BdStatus::BdOk,
            Err(e) => fail_err(&e),
        }
    })
}

/// Releases a handle. Null is accepted and ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bd_model_free(model: *mut BdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of input features per row.
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bd_model_input_dim(model: *const BdModel, out: *mut usize) -> BdStatus {
    require!(model);
    require!(out);
    *out = (*model).inner.spec.input_dim;
    BdStatus::BdOk
}

/// Number of classes in the head.
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bd_model_num_classes(model: *const BdModel, out: *mut usize) -> BdStatus {
    require!(model);
    require!(out);
    *out = (*model).inner.spec.num_classes;
    BdStatus::BdOk
}

/// Width of the feature vector produced by `bd_model_forward`: the last
/// stage's width.
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bd_model_feature_dim(model: *const BdModel, out: *mut usize) -> BdStatus {
    require!(model);
    require!(out);
    let spec = &(*model).inner.spec;
    *out = spec.stages.last().map_or(spec.input_dim, |s| s.width);
    BdStatus::BdOk
}

/// Number of residual stages.
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bd_model_num_stages(model: *const BdModel, out: *mut usize) -> BdStatus {
    require!(model);
    require!(out);
    *out = (*model).inner.spec.stages.len();
    BdStatus::BdOk
}

/// Number of block positions in a stage. Positions keep their index for
/// the life of the model: dropping a block leaves the numbering of the
/// others unchanged.
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bd_model_stage_blocks(
    model: *const BdModel,
    stage: usize,
    out: *mut usize,
) -> BdStatus {
    require!(model);
    require!(out);
    match (*model).inner.spec.stages.get(stage) {
        Some(s) => {
            *out = s.blocks;
            BdStatus::BdOk
        }
        None => fail(BdStatus::BdErrInvalidArgument, "stage index out of range"),
    }
}

/// Per-example forward cost of the current architecture in flops;
/// dropped blocks and pruned widths are reflected.
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bd_model_count_flops(model: *const BdModel, out: *mut u64) -> BdStatus {
    require!(model);
    require!(out);
    *out = (*model).inner.count_flops();
    BdStatus::BdOk
}

/// Sets both layers of one residual block to zero, making it an identity
/// in function while keeping its cost.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bd_model_zero_block(
    model: *mut BdModel,
    stage: usize,
    index: usize,
) -> BdStatus {
    require!(model);
    guarded(|| match compress::zero_block(&mut (*model).inner, BlockId { stage, index }) {
        Ok(()) => BdStatus::BdOk,
        Err(e) => fail_err(&e),
    })
}

/// Removes one residual block from the forward pass entirely. Dropping
/// the same block twice is an error.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bd_model_drop_block(
    model: *mut BdModel,
    stage: usize,
    index: usize,
) -> BdStatus {
    require!(model);
    guarded(|| match compress::drop_block(&mut (*model).inner, BlockId { stage, index }) {
        Ok(()) => BdStatus::BdOk,
        Err(e) => fail_err(&e),
    })
}

/// Runs the model on `n_rows` examples stored row-major in `rows`
/// (`n_rows * input_dim` doubles). When non-null, `features_out` receives
/// `n_rows * feature_dim` doubles and `logits_out` receives
/// `n_rows * num_classes` doubles. Either output may be null to skip it.
///
/// # Safety
/// `model` must be a live handle and every non-null buffer sized as
/// described above.
#[no_mangle]
pub unsafe extern "C" fn bd_model_forward(
    model: *const BdModel,
    rows: *const f64,
    n_rows: usize,
    features_out: *mut f64,
    logits_out: *mut f64,
) -> BdStatus {
    require!(model);
    require!(rows);
    if n_rows == 0 {
        return fail(BdStatus::BdErrInvalidArgument, "n_rows must be at least 1");
    }
    guarded(|| {
        let m = &(*model).inner;
        let dim = m.spec.input_dim;
        let data = std::slice::from_raw_parts(rows, n_rows * dim).to_vec();
        let x = match Tensor::from_vec(n_rows, dim, data) {
            Ok(x) => x,
            Err(e) => return fail_err(&e),
        };
        match m.forward(&x) {
            Ok((feature, logits)) => {
                if !features_out.is_null() {
                    let src = feature.data();
                    std::ptr::copy_nonoverlapping(src.as_ptr(), features_out, src.len());
                }
                if !logits_out.is_null() {
                    let src = logits.data();
                    std::ptr::copy_nonoverlapping(src.as_ptr(), logits_out, src.len());
                }
                BdStatus::BdOk
            }
            Err(e) => fail_err(&e),
        }
    })
}

/// Measures single-threaded forward latency on a seeded random batch.
/// `warmup` passes run untimed, then `trials` passes are timed; the mean
/// and population standard deviation in seconds land in the out-pointers.
/// Zero `batch` or `trials` selects the defaults (64 and 500); zero
/// `warmup` really means no warmup.
///
/// # Safety
/// `model` must be a live handle; the out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bd_model_measure_latency(
    model: *const BdModel,
    batch: usize,
    trials: usize,
    warmup: usize,
    seed: u64,
    mean_s_out: *mut f64,
    std_s_out: *mut f64,
) -> BdStatus {
    require!(model);
    require!(mean_s_out);
    require!(std_s_out);
    guarded(|| {
        let defaults = LatencyCfg::default();
        let cfg = LatencyCfg {
            batch: if batch == 0 { defaults.batch } else { batch },
            trials: if trials == 0 { defaults.trials } else { trials },
            warmup,
            seed,
        };
        match measure_latency(&(*model).inner, &cfg) {
            Ok(stats) => {
                *mean_s_out = stats.mean_s;
                *std_s_out = stats.std_s;
                BdStatus::BdOk
            }
            Err(e) => fail_err(&e),
        }
    })
}
