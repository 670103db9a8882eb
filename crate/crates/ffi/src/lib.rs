//! C ABI for `allab`.
//!
//! Objects cross the boundary as opaque handles created by `allab_*_new`/`_load`
//! style functions and released with the matching `_free`. Every fallible call
//! returns an [`AllabStatus`]; on failure a message is available from
//! [`allab_last_error`] on the same thread until the next failing call.
//!
//! Handles are not thread-safe: use one handle per thread or synchronise.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use allab::acquisition;
use allab::config::{parse_config, parse_config_str, ExperimentConfig};
use allab::experiment::{self, ExperimentResult, PreparedData, RunOptions};
use allab::learner::{load_checkpoint, LearnerModel};
use allab::report::{self, OutputFormat};
use allab::Error;
use ndarray::ArrayView2;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllabStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The configuration could not be parsed or failed validation.
    ConfigError = 3,
    /// Training, acquisition or I/O failed.
    RuntimeError = 4,
    /// An index argument was out of range.
    OutOfRange = 5,
    /// A bug: the library panicked. The handle involved should be discarded.
    Panic = 6,
}

/// Parsed experiment configuration.
pub struct AllabConfig {
    cfg: ExperimentConfig,
    base_dir: Option<PathBuf>,
}

/// Results of a finished experiment.
pub struct AllabResult {
    result: ExperimentResult,
    data: PreparedData,
}

/// A trained classifier loaded from a checkpoint.
pub struct AllabModel {
    model: LearnerModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: AllabStatus, msg: impl Into<String>) -> AllabStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> AllabStatus {
    let status = if e.is_config_error() { AllabStatus::ConfigError } else { AllabStatus::RuntimeError };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> AllabStatus) -> AllabStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(AllabStatus::Panic, "internal panic"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, AllabStatus> {
    if p.is_null() {
        return Err(fail(AllabStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(AllabStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! handle {
    ($p:expr, $name:literal) => {
        handle!(@ $p.as_ref(), $name)
    };
    (mut $p:expr, $name:literal) => {
        handle!(@ $p.as_mut(), $name)
    };
    (@ $opt:expr, $name:literal) => {
        match $opt {
            Some(h) => h,
            None => return fail(AllabStatus::NullPointer, concat!("`", $name, "` is null")),
        }
    };
}

/// Message of the last failed call on this thread, or null. Owned by the library
/// and valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn allab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn allab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads and validates a JSON config file. Relative dataset paths resolve
/// against the file's directory.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn allab_config_load(path: *const c_char, out: *mut *mut AllabConfig) -> AllabStatus {
    guard(|| {
        if out.is_null() {
            return fail(AllabStatus::NullPointer, "`out` is null");
        }
        let path = PathBuf::from(try_status!(str_arg(path, "path")));
        match parse_config(&path) {
            Ok(cfg) => {
                let base_dir = path.parent().map(PathBuf::from);
                *out = Box::into_raw(Box::new(AllabConfig { cfg, base_dir }));
                AllabStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Parses and validates a JSON config held in memory.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn allab_config_parse(json: *const c_char, out: *mut *mut AllabConfig) -> AllabStatus {
    guard(|| {
        if out.is_null() {
            return fail(AllabStatus::NullPointer, "`out` is null");
        }
        let text = try_status!(str_arg(json, "json"));
        match parse_config_str(text, std::path::Path::new("<memory>")) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(AllabConfig { cfg, base_dir: None }));
                AllabStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Overrides the base seed.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn allab_config_set_seed(cfg: *mut AllabConfig, seed: u64) -> AllabStatus {
    let c = handle!(mut cfg, "cfg");
    c.cfg.base_seed = seed;
    AllabStatus::Ok
}

/// Overrides the number of trials (must be at least 1).
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn allab_config_set_trials(cfg: *mut AllabConfig, trials: usize) -> AllabStatus {
    let c = handle!(mut cfg, "cfg");
    if trials < 1 {
        return fail(AllabStatus::ConfigError, "trials must be >= 1");
    }
    c.cfg.trials = trials;
    AllabStatus::Ok
}

/// SHA-256 of the canonical config, as 64 hex characters plus NUL written to `buf`
/// (which must hold at least 65 bytes).
///
/// # Safety
/// `cfg` must be a live handle and `buf` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn allab_config_hash(cfg: *const AllabConfig, buf: *mut c_char, len: usize) -> AllabStatus {
    let c = handle!(cfg, "cfg");
    if buf.is_null() {
        return fail(AllabStatus::NullPointer, "`buf` is null");
    }
    let hash = c.cfg.hash();
    if len < hash.len() + 1 {
        return fail(AllabStatus::OutOfRange, format!("buffer needs {} bytes", hash.len() + 1));
    }
    ptr::copy_nonoverlapping(hash.as_ptr().cast(), buf, hash.len());
    *buf.add(hash.len()) = 0;
    AllabStatus::Ok
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn allab_config_free(cfg: *mut AllabConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs every trial of the experiment. `jobs == 0` uses all cores.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn allab_run(cfg: *const AllabConfig, jobs: usize, out: *mut *mut AllabResult) -> AllabStatus {
    guard(|| {
        let c = handle!(cfg, "cfg");
        if out.is_null() {
            return fail(AllabStatus::NullPointer, "`out` is null");
        }
        let opts = RunOptions {
            jobs: (jobs > 0).then_some(jobs),
            base_dir: c.base_dir.clone(),
        };
        let run = experiment::prepare_data(&c.cfg, opts.base_dir.as_deref())
            .and_then(|data| experiment::run_experiment_on(&c.cfg, &data, &opts).map(|result| (result, data)));
        match run {
            Ok((result, data)) => {
                *out = Box::into_raw(Box::new(AllabResult { result, data }));
                AllabStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of cycle records.
///
/// # Safety
/// `res` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn allab_result_num_cycles(res: *const AllabResult, out: *mut usize) -> AllabStatus {
    let r = handle!(res, "res");
    if out.is_null() {
        return fail(AllabStatus::NullPointer, "`out` is null");
    }
    *out = r.result.records.len();
    AllabStatus::Ok
}

/// Labeled count, mean accuracy and sample std of cycle `cycle`. Any output
/// pointer may be null.
///
/// # Safety
/// `res` must be a live handle; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn allab_result_cycle(
    res: *const AllabResult,
    cycle: usize,
    labeled: *mut usize,
    mean: *mut f64,
    std: *mut f64,
) -> AllabStatus {
    let r = handle!(res, "res");
    let Some(rec) = r.result.records.get(cycle) else {
        return fail(AllabStatus::OutOfRange, format!("cycle {cycle} of {}", r.result.records.len()));
    };
    if !labeled.is_null() {
        *labeled = rec.labeled_count;
    }
    if !mean.is_null() {
        *mean = rec.mean;
    }
    if !std.is_null() {
        *std = rec.std;
    }
    AllabStatus::Ok
}

/// Number of trials that completed without error.
///
/// # Safety
/// `res` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn allab_result_completed_trials(res: *const AllabResult, out: *mut usize) -> AllabStatus {
    let r = handle!(res, "res");
    if out.is_null() {
        return fail(AllabStatus::NullPointer, "`out` is null");
    }
    *out = r.result.completed_trials().count();
    AllabStatus::Ok
}

/// Writes results CSV, selection and score logs, checkpoints and manifest to `dir`.
///
/// # Safety
/// `res` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn allab_result_write(res: *const AllabResult, dir: *const c_char) -> AllabStatus {
    guard(|| {
        let r = handle!(res, "res");
        let dir = try_status!(str_arg(dir, "dir"));
        match report::write_run(std::path::Path::new(dir), &r.data.train, &r.result, OutputFormat::Csv) {
            Ok(_) => AllabStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `res` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn allab_result_free(res: *mut AllabResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn allab_model_load(path: *const c_char, out: *mut *mut AllabModel) -> AllabStatus {
    guard(|| {
        if out.is_null() {
            return fail(AllabStatus::NullPointer, "`out` is null");
        }
        let path = try_status!(str_arg(path, "path"));
        match load_checkpoint(path) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(AllabModel { model }));
                AllabStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Input width and number of classes of a model. Either pointer may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn allab_model_shape(model: *const AllabModel, dim: *mut usize, num_classes: *mut usize) -> AllabStatus {
    let m = handle!(model, "model");
    if !dim.is_null() {
        *dim = m.model.network().input_dim();
    }
    if !num_classes.is_null() {
        *num_classes = m.model.network().num_classes();
    }
    AllabStatus::Ok
}

/// Class probabilities (dropout off) for `rows` row-major samples of width `dim`.
/// `out` receives `rows * num_classes` values.
///
/// # Safety
/// `x` must be valid for `rows * dim` reads and `out` for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn allab_model_predict_proba(
    model: *const AllabModel,
    x: *const f64,
    rows: usize,
    dim: usize,
    out: *mut f64,
    out_len: usize,
) -> AllabStatus {
    guard(|| {
        let m = handle!(model, "model");
        if x.is_null() || out.is_null() {
            return fail(AllabStatus::NullPointer, "`x` or `out` is null");
        }
        let net = m.model.network();
        if dim != net.input_dim() {
            return fail(AllabStatus::OutOfRange, format!("model expects {} features, got {dim}", net.input_dim()));
        }
        let Some(needed) = rows.checked_mul(net.num_classes()) else {
            return fail(AllabStatus::OutOfRange, "rows too large");
        };
        if out_len < needed {
            return fail(AllabStatus::OutOfRange, format!("`out` needs {needed} values"));
        }
        let xs = std::slice::from_raw_parts(x, rows * dim);
        let view = ArrayView2::from_shape((rows, dim), xs).expect("shape checked");
        let p = m.model.proba_of(view);
        std::slice::from_raw_parts_mut(out, needed).copy_from_slice(p.as_standard_layout().as_slice().expect("contiguous"));
        AllabStatus::Ok
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn allab_model_free(model: *mut AllabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Entropy scores (nats) of `rows` row-major probability vectors of width `cols`.
///
/// # Safety
/// `probs` must be valid for `rows * cols` reads and `out` for `rows` writes.
#[no_mangle]
pub unsafe extern "C" fn allab_score_entropy(probs: *const f64, rows: usize, cols: usize, out: *mut f64) -> AllabStatus {
    guard(|| {
        if probs.is_null() || out.is_null() {
            return fail(AllabStatus::NullPointer, "`probs` or `out` is null");
        }
        let Some(n) = rows.checked_mul(cols) else {
            return fail(AllabStatus::OutOfRange, "rows * cols overflows");
        };
        let view = ArrayView2::from_shape((rows, cols), std::slice::from_raw_parts(probs, n)).expect("shape checked");
        match acquisition::score_entropy(view) {
            Ok(s) => {
                std::slice::from_raw_parts_mut(out, rows).copy_from_slice(s.scores());
                AllabStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
