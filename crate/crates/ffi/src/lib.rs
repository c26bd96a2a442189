//! C ABI over the core multi-view clustering library.
//!
//! Conventions:
//! - Handles (`SmileDataset`, `SmileModel`) are opaque; C code only ever
//!   holds pointers obtained from the constructors here and releases them
//!   with the matching `smile_*_free`. Freeing a null pointer is a no-op.
//! - Every fallible call returns a [`SmileStatus`]; `SMILE_STATUS_OK` is 0.
//!   On failure the thread-local error message is set and can be copied out
//!   with [`smile_last_error`].
//! - Strings cross the boundary as NUL-terminated UTF-8. Strings returned
//!   by the library must be released with [`smile_string_free`].
//! - All functions catch panics; a panic reports
//!   `SMILE_STATUS_INTERNAL_PANIC` instead of unwinding across the ABI.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use smile_core::data::{corrupt, make_synthetic, CorruptionSpec, MultiViewDataset};
use smile_core::error::SmileError;
use smile_core::io::{load_dataset, save_dataset};
use smile_core::network::Model;
use smile_core::trainer::{evaluate, train, TrainConfig};

/// Status code of every fallible call. `Ok` is zero; everything else
/// classifies the failure and leaves a message for [`smile_last_error`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmileStatus {
    Ok = 0,
    /// A value was outside an operation's domain.
    InvalidArgument = 1,
    /// A numeric computation left the finite range or degenerated.
    NumericFailure = 2,
    /// An internal consistency check failed.
    InvariantViolated = 3,
    /// A data file could not be parsed.
    ParseError = 4,
    /// An I/O operation failed.
    IoError = 5,
    /// A configuration string was rejected.
    ConfigError = 6,
    /// A required pointer argument was null.
    NullPointer = 7,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 8,
    /// The library caught a panic; state may be inconsistent.
    InternalPanic = 9,
}

/// An opaque multi-view dataset handle.
pub struct SmileDataset {
    inner: MultiViewDataset,
}

/// An opaque trained-model handle (network weights plus the training
/// configuration they were produced with, which evaluation reuses).
pub struct SmileModel {
    model: Model,
    config: TrainConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend_from_slice(msg.as_bytes());
    });
}

fn status_of(err: &SmileError) -> SmileStatus {
    match err {
        SmileError::Argument(_) => SmileStatus::InvalidArgument,
        SmileError::Numeric(_) => SmileStatus::NumericFailure,
        SmileError::Invariant(_) => SmileStatus::InvariantViolated,
        SmileError::Parse { .. } => SmileStatus::ParseError,
        SmileError::Io { .. } => SmileStatus::IoError,
        SmileError::Config(_) => SmileStatus::ConfigError,
    }
}

fn fail(err: &SmileError) -> SmileStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Run a fallible body with panic containment.
fn guarded(body: impl FnOnce() -> SmileStatus) -> SmileStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(&format!("internal panic: {msg}"));
            SmileStatus::InternalPanic
        }
    }
}

/// Null-check a required pointer; reports which argument was missing.
macro_rules! require {
    ($ptr:expr, $name:literal) => {
        if $ptr.is_null() {
            set_error(concat!("null pointer: ", $name));
            return SmileStatus::NullPointer;
        }
    };
}

fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, SmileStatus> {
    // Caller has already null-checked `ptr`.
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_error(&format!("argument {name} is not valid UTF-8"));
            Err(SmileStatus::InvalidUtf8)
        }
    }
}

/// Library version as a static NUL-terminated string; never freed.
#[no_mangle]
pub extern "C" fn smile_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the current thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap` bytes including the NUL) and return the full message
/// length in bytes. Call with a null `buf` or zero `cap` to query the
/// length. The message is only meaningful after a non-OK status.
#[no_mangle]
pub extern "C" fn smile_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Generate a complete synthetic dataset: `n` instances in `k` categories,
/// latent dimension `d_latent`, one view per entry of
/// `view_dims[0..n_views]`, feature noise `noise`, all keyed by `seed`.
///
/// # Safety
/// `view_dims` must point to `n_views` readable `size_t`s and `out` must be
/// a valid location to store the new handle.
#[no_mangle]
pub unsafe extern "C" fn smile_dataset_generate(
    n: usize,
    k: usize,
    d_latent: usize,
    view_dims: *const usize,
    n_views: usize,
    noise: f64,
    seed: u64,
    out: *mut *mut SmileDataset,
) -> SmileStatus {
    guarded(|| {
        require!(out, "out");
        require!(view_dims, "view_dims");
        let dims = unsafe { std::slice::from_raw_parts(view_dims, n_views) };
        match make_synthetic(n, k, d_latent, dims, noise, seed) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(SmileDataset { inner })) };
                SmileStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Corrupt a complete dataset: a `zeta` fraction of instances loses
/// cross-view correspondence and a disjoint `eta` fraction loses a strict
/// subset of its views. Produces a new handle; the input is untouched.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` a valid store location.
#[no_mangle]
pub unsafe extern "C" fn smile_dataset_corrupt(
    ds: *const SmileDataset,
    eta: f64,
    zeta: f64,
    seed: u64,
    out: *mut *mut SmileDataset,
) -> SmileStatus {
    guarded(|| {
        require!(ds, "ds");
        require!(out, "out");
        let ds = unsafe { &*ds };
        let result = CorruptionSpec::new(eta, zeta, seed).and_then(|spec| corrupt(&ds.inner, &spec));
        match result {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(SmileDataset { inner })) };
                SmileStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Write a dataset to a directory of CSV files (creating it if needed).
///
/// # Safety
/// `ds` must be a live dataset handle and `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn smile_dataset_save(ds: *const SmileDataset, dir: *const c_char) -> SmileStatus {
    guarded(|| {
        require!(ds, "ds");
        require!(dir, "dir");
        let path = match utf8_arg(dir, "dir") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match save_dataset(&unsafe { &*ds }.inner, Path::new(path)) {
            Ok(()) => SmileStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Load a dataset previously written by [`smile_dataset_save`].
///
/// # Safety
/// `dir` must be a NUL-terminated path and `out` a valid store location.
#[no_mangle]
pub unsafe extern "C" fn smile_dataset_load(dir: *const c_char, out: *mut *mut SmileDataset) -> SmileStatus {
    guarded(|| {
        require!(dir, "dir");
        require!(out, "out");
        let path = match utf8_arg(dir, "dir") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match load_dataset(Path::new(path)) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(SmileDataset { inner })) };
                SmileStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Basic shape and corruption rates of a dataset. Any output pointer may be
/// null to skip that field.
///
/// # Safety
/// `ds` must be a live dataset handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn smile_dataset_info(
    ds: *const SmileDataset,
    out_instances: *mut usize,
    out_views: *mut usize,
    out_eta: *mut f64,
    out_zeta: *mut f64,
) -> SmileStatus {
    guarded(|| {
        require!(ds, "ds");
        let ds = &unsafe { &*ds }.inner;
        let (eta, zeta) = ds.rates();
        unsafe {
            if !out_instances.is_null() {
                *out_instances = ds.n();
            }
            if !out_views.is_null() {
                *out_views = ds.n_views();
            }
            if !out_eta.is_null() {
                *out_eta = eta;
            }
            if !out_zeta.is_null() {
                *out_zeta = zeta;
            }
        }
        SmileStatus::Ok
    })
}

/// Release a dataset handle. Null is a no-op.
///
/// # Safety
/// `ds` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn smile_dataset_free(ds: *mut SmileDataset) {
    if !ds.is_null() {
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// Train a model on a dataset. `config_json` is an optional (nullable)
/// JSON object with the training configuration's flat keys, e.g.
/// `{"max_epochs": 150, "lambda_sil": 0.04}`; omitted keys take their
/// defaults, unknown keys are rejected.
///
/// # Safety
/// `ds` must be a live dataset handle, `config_json` null or a
/// NUL-terminated string, and `out` a valid store location.
#[no_mangle]
pub unsafe extern "C" fn smile_train(
    ds: *const SmileDataset,
    config_json: *const c_char,
    out: *mut *mut SmileModel,
) -> SmileStatus {
    guarded(|| {
        require!(ds, "ds");
        require!(out, "out");
        let config: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            let text = match utf8_arg(config_json, "config_json") {
                Ok(s) => s,
                Err(status) => return status,
            };
            match serde_json::from_str(text) {
                Ok(c) => c,
                Err(e) => {
                    set_error(&format!("config error: {e}"));
                    return SmileStatus::ConfigError;
                }
            }
        };
        match train(&unsafe { &*ds }.inner, &config) {
            Ok((model, _history)) => {
                unsafe { *out = Box::into_raw(Box::new(SmileModel { model, config })) };
                SmileStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn smile_model_free(model: *mut SmileModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Evaluate a trained model on a dataset: encode, recover missing and
/// unaligned samples, cluster, and score. Returns a JSON object (metric
/// keys appear only when the dataset carries the ground truth they need);
/// release it with [`smile_string_free`].
///
/// # Safety
/// `model` and `ds` must be live handles and `out_json` a valid store
/// location.
#[no_mangle]
pub unsafe extern "C" fn smile_evaluate(
    model: *const SmileModel,
    ds: *const SmileDataset,
    out_json: *mut *mut c_char,
) -> SmileStatus {
    guarded(|| {
        require!(model, "model");
        require!(ds, "ds");
        require!(out_json, "out_json");
        let handle = unsafe { &*model };
        let report = match evaluate(&handle.model, &unsafe { &*ds }.inner, &handle.config) {
            Ok(r) => r,
            Err(e) => return fail(&e),
        };
        let text = match serde_json::to_string_pretty(&report) {
            Ok(t) => t,
            Err(e) => {
                set_error(&format!("serialization error: {e}"));
                return SmileStatus::InvariantViolated;
            }
        };
        match CString::new(text) {
            Ok(c) => {
                unsafe { *out_json = c.into_raw() };
                SmileStatus::Ok
            }
            Err(_) => {
                set_error("serialized report contained a NUL byte");
                SmileStatus::InvariantViolated
            }
        }
    })
}

/// Release a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn smile_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
