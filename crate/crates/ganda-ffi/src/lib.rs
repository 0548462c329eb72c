//! C ABI for the domain-adaptation trainer.
//!
//! Conventions:
//! - Every fallible function returns a [`GandaStatus`] code; `GANDA_STATUS_OK`
//!   is zero.
//! - Handles (`GandaDataset`, `GandaRun`) are opaque; free them with the
//!   matching `*_free` function exactly once. NULL is accepted by the free
//!   functions and ignored.
//! - Strings returned by the library are NUL-terminated and owned by the
//!   caller; release them with `ganda_string_free`.
//! - The last error message is thread-local; fetch it with
//!   `ganda_last_error_message` right after a non-OK status.
//! - Handles are not thread-safe; use a handle from one thread at a time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::{c_char, c_double};
use std::path::Path;
use std::ptr;

use ganda::datasets::{load_feature_csv, make_blobs, make_moons_pair, DomainPair};
use ganda::diffcore::DiffArray;
use ganda::gradcheck::grad_check;
use ganda::models::ModelBundle;
use ganda::trainer::{fit, EpochReport, TrainConfig};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum GandaStatus {
    Ok = 0,
    /// A pointer argument was NULL or otherwise invalid.
    InvalidArgument = 1,
    /// The JSON config failed to parse or validate.
    ConfigError = 2,
    /// Training aborted on a non-finite loss.
    Diverged = 3,
    /// File could not be read or parsed.
    IoError = 4,
    /// Any other internal failure.
    InternalError = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let cstring = CString::new(msg.into()).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(cstring));
}

/// Copy the last error message into `buf` (up to `len` bytes including the
/// terminating NUL). Returns the number of bytes the full message needs,
/// including the NUL; 0 when no error is recorded.
///
/// # Safety
/// `buf` must point to at least `len` writable bytes, or be NULL (then only
/// the required length is returned).
#[no_mangle]
pub unsafe extern "C" fn ganda_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let slot = slot.borrow();
        let Some(msg) = slot.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast(), n);
            // always NUL-terminate, even when truncated
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Opaque handle over a source/target domain pair.
pub struct GandaDataset {
    pair: DomainPair,
}

/// Opaque handle over a finished training run (model + history).
pub struct GandaRun {
    bundle: ModelBundle,
    history: Vec<EpochReport>,
    diverged: Option<String>,
}

unsafe fn cstr_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, GandaStatus> {
    if ptr.is_null() {
        set_error(format!("{name} must not be NULL"));
        return Err(GandaStatus::InvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{name} is not valid UTF-8"));
        GandaStatus::InvalidArgument
    })
}

fn emit_dataset(out: *mut *mut GandaDataset, pair: DomainPair) -> GandaStatus {
    unsafe { *out = Box::into_raw(Box::new(GandaDataset { pair })) };
    GandaStatus::Ok
}

/// Twin-moons domain pair with the target rotated by `rotation_degrees`.
///
/// # Safety
/// `out` must be a valid pointer to a `GandaDataset*` slot.
#[no_mangle]
pub unsafe extern "C" fn ganda_dataset_moons(
    n_per_class: usize,
    rotation_degrees: c_double,
    noise_sigma: c_double,
    seed: u64,
    out: *mut *mut GandaDataset,
) -> GandaStatus {
    if out.is_null() {
        set_error("out must not be NULL");
        return GandaStatus::InvalidArgument;
    }
    match make_moons_pair(n_per_class, rotation_degrees, noise_sigma, seed) {
        Ok(pair) => emit_dataset(out, pair),
        Err(e) => {
            set_error(e.to_string());
            GandaStatus::ConfigError
        }
    }
}

/// Gaussian-blob domain pair; `shift` must point to `dim` doubles.
///
/// # Safety
/// `shift` must point to `dim` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ganda_dataset_blobs(
    class_count: usize,
    dim: usize,
    n_per_class: usize,
    center_spread: c_double,
    shift: *const c_double,
    seed: u64,
    out: *mut *mut GandaDataset,
) -> GandaStatus {
    if out.is_null() || shift.is_null() {
        set_error("shift and out must not be NULL");
        return GandaStatus::InvalidArgument;
    }
    let shift = std::slice::from_raw_parts(shift, dim);
    match make_blobs(class_count, dim, n_per_class, center_spread, shift, seed) {
        Ok(pair) => emit_dataset(out, pair),
        Err(e) => {
            set_error(e.to_string());
            GandaStatus::ConfigError
        }
    }
}

/// Load a domain pair from two headerless feature CSV files
/// (comma-separated reals then an integer label per row).
///
/// # Safety
/// Both paths must be NUL-terminated strings; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ganda_dataset_load_csv(
    source_path: *const c_char,
    target_path: *const c_char,
    out: *mut *mut GandaDataset,
) -> GandaStatus {
    if out.is_null() {
        set_error("out must not be NULL");
        return GandaStatus::InvalidArgument;
    }
    let source = match cstr_arg(source_path, "source_path") {
        Ok(s) => s,
        Err(status) => return status,
    };
    let target = match cstr_arg(target_path, "target_path") {
        Ok(s) => s,
        Err(status) => return status,
    };
    match load_feature_csv(Path::new(source), Path::new(target)) {
        Ok(pair) => emit_dataset(out, pair),
        Err(e) => {
            set_error(e.to_string());
            GandaStatus::IoError
        }
    }
}

/// # Safety
/// `dataset` must come from a `ganda_dataset_*` constructor, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ganda_dataset_free(dataset: *mut GandaDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `dataset` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ganda_dataset_source_len(dataset: *const GandaDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).pair.source().len()
}

/// # Safety
/// `dataset` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ganda_dataset_target_len(dataset: *const GandaDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).pair.target_len()
}

/// # Safety
/// `dataset` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ganda_dataset_dim(dataset: *const GandaDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).pair.dim()
}

/// # Safety
/// `dataset` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ganda_dataset_class_count(dataset: *const GandaDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).pair.class_count()
}

/// Train a model. `config_json` carries the training config as JSON, the
/// same schema the CLI's `run --config` accepts. On divergence the run
/// handle is still produced (with the history up to the last good epoch)
/// and the status is `GANDA_STATUS_DIVERGED`.
///
/// # Safety
/// `dataset` must be a live handle, `config_json` a NUL-terminated string,
/// `out` a valid slot.
#[no_mangle]
pub unsafe extern "C" fn ganda_fit(
    dataset: *const GandaDataset,
    config_json: *const c_char,
    out: *mut *mut GandaRun,
) -> GandaStatus {
    if dataset.is_null() || out.is_null() {
        set_error("dataset and out must not be NULL");
        return GandaStatus::InvalidArgument;
    }
    let json = match cstr_arg(config_json, "config_json") {
        Ok(s) => s,
        Err(status) => return status,
    };
    let cfg: TrainConfig = match serde_json::from_str(json) {
        Ok(c) => c,
        Err(e) => {
            set_error(format!("config: {e}"));
            return GandaStatus::ConfigError;
        }
    };
    if let Err(e) = cfg.validate() {
        set_error(e.to_string());
        return GandaStatus::ConfigError;
    }
    match fit(&(*dataset).pair, &cfg) {
        Ok(outcome) => {
            let status = if outcome.diverged.is_some() {
                set_error(outcome.diverged.clone().unwrap_or_default());
                GandaStatus::Diverged
            } else {
                GandaStatus::Ok
            };
            *out = Box::into_raw(Box::new(GandaRun {
                bundle: outcome.bundle,
                history: outcome.history,
                diverged: outcome.diverged,
            }));
            status
        }
        Err(e) => {
            set_error(e.to_string());
            GandaStatus::InternalError
        }
    }
}

/// # Safety
/// `run` must come from `ganda_fit`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ganda_run_free(run: *mut GandaRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ganda_run_epochs(run: *const GandaRun) -> usize {
    if run.is_null() {
        return 0;
    }
    (*run).history.len()
}

/// 1 when the run aborted on a non-finite loss.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ganda_run_diverged(run: *const GandaRun) -> i32 {
    if run.is_null() {
        return 0;
    }
    (*run).diverged.is_some() as i32
}

/// Final target-domain accuracy, or -1 when the history is empty.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ganda_run_final_target_accuracy(run: *const GandaRun) -> c_double {
    if run.is_null() {
        return -1.0;
    }
    (*run).history.last().map(|r| r.acc_target).unwrap_or(-1.0)
}

/// The per-epoch history as a JSON array string. Free with
/// `ganda_string_free`.
///
/// # Safety
/// `run` must be a live handle; `out` a valid slot.
#[no_mangle]
pub unsafe extern "C" fn ganda_run_history_json(run: *const GandaRun, out: *mut *mut c_char) -> GandaStatus {
    if run.is_null() || out.is_null() {
        set_error("run and out must not be NULL");
        return GandaStatus::InvalidArgument;
    }
    let json = serde_json::to_string(&(*run).history).expect("serializable history");
    match CString::new(json) {
        Ok(s) => {
            *out = s.into_raw();
            GandaStatus::Ok
        }
        Err(_) => {
            set_error("history contained interior NUL");
            GandaStatus::InternalError
        }
    }
}

/// Classify `n` rows of `dim` features; writes `n` class indices to
/// `out_labels`.
///
/// # Safety
/// `features` must point to `n * dim` readable doubles and `out_labels` to
/// `n` writable usize slots; `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ganda_run_predict(
    run: *const GandaRun,
    features: *const c_double,
    n: usize,
    dim: usize,
    out_labels: *mut usize,
) -> GandaStatus {
    if run.is_null() || features.is_null() || out_labels.is_null() {
        set_error("run, features, and out_labels must not be NULL");
        return GandaStatus::InvalidArgument;
    }
    let bundle = &(*run).bundle;
    if dim != bundle.input_dim || n == 0 {
        set_error(format!("expected dim {} and n >= 1, got dim {dim}, n {n}", bundle.input_dim));
        return GandaStatus::InvalidArgument;
    }
    let values = std::slice::from_raw_parts(features, n * dim).to_vec();
    let x = match DiffArray::constant(vec![n, dim], values) {
        Ok(x) => x,
        Err(e) => {
            set_error(e.to_string());
            return GandaStatus::InvalidArgument;
        }
    };
    match bundle.predict(&x) {
        Ok((_, labels)) => {
            ptr::copy_nonoverlapping(labels.as_ptr(), out_labels, n);
            GandaStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            GandaStatus::InternalError
        }
    }
}

/// Run the finite-difference gradient check for one seed; writes the maximum
/// relative error observed.
///
/// # Safety
/// `out_max_rel_err` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn ganda_grad_check(seed: u64, out_max_rel_err: *mut c_double) -> GandaStatus {
    if out_max_rel_err.is_null() {
        set_error("out_max_rel_err must not be NULL");
        return GandaStatus::InvalidArgument;
    }
    match grad_check(seed) {
        Ok(report) => {
            *out_max_rel_err = report.max_rel_err();
            GandaStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            GandaStatus::InternalError
        }
    }
}

/// # Safety
/// `s` must be a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ganda_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
