//! C ABI for the glgnn engine.
//!
//! All objects cross the boundary as opaque pointers that the caller owns and
//! releases with the matching `*_free` function. Every fallible call returns a
//! [`GlgnnStatus`]; on failure a description of the error is kept per thread
//! and can be read with [`glgnn_last_error`]. Strings are NUL-terminated UTF-8.
//!
//! Panics never unwind into the caller: they are caught and reported as
//! [`GlgnnStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use glgnn::checkpoint::Checkpoint;
use glgnn::config::TrainConfig;
use glgnn::data::{generate_sbm, load_dataset_with, Dataset, LoadOptions, SbmSpec};
use glgnn::flops::{estimate_flops, FlopDims};
use glgnn::train::{predict_probs, train, Problem, TrainOutcome};
use glgnn::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlgnnStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8, or a buffer was too small.
    InvalidArgument = 2,
    /// Bad configuration key or value.
    Config = 3,
    /// Malformed, inconsistent or unreadable dataset, split or checkpoint.
    Data = 4,
    /// Training produced a non-finite loss or parameter.
    NonFinite = 5,
    /// Internal contract or shape violation.
    Internal = 6,
    /// A panic was caught at the boundary.
    Panic = 7,
}

impl From<&Error> for GlgnnStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => GlgnnStatus::Config,
            Error::Parse { .. }
            | Error::Integrity(_)
            | Error::Split(_)
            | Error::UndefinedMetric(_)
            | Error::Io { .. } => GlgnnStatus::Data,
            Error::NonFinite { .. } => GlgnnStatus::NonFinite,
            _ => GlgnnStatus::Internal,
        }
    }
}

/// A loaded or generated dataset.
pub struct GlgnnDataset {
    inner: Dataset,
}

/// A mutable training configuration, starting from the defaults.
pub struct GlgnnConfig {
    inner: TrainConfig,
}

/// The outcome of one training run: metrics and best-validation parameters.
pub struct GlgnnRun {
    outcome: TrainOutcome,
    config: TrainConfig,
    input_dim: usize,
    num_classes: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct GlgnnDatasetInfo {
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    /// Undirected edges without self-loops.
    pub num_edges: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct GlgnnRunSummary {
    pub test_acc: f64,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct GlgnnEpoch {
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub loss_ce: f64,
    /// 0 for heads without label features.
    pub loss_gl: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Internal failure carrying the status to return.
struct Failure(GlgnnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(GlgnnStatus::NullArgument, format!("{what} is null"))
}

/// Runs `body`, translating errors and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> GlgnnStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => GlgnnStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            GlgnnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(GlgnnStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    str_arg(p, what).map(PathBuf::from)
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copies `s` plus a NUL into `buf` when it fits; always reports the needed size.
unsafe fn write_str(s: &str, buf: *mut c_char, capacity: usize, needed: *mut usize) -> Result<(), Failure> {
    let len = s.len() + 1;
    if let Some(n) = needed.as_mut() {
        *n = len;
    }
    if buf.is_null() {
        return if capacity == 0 { Ok(()) } else { Err(null("buf")) };
    }
    if capacity < len {
        return Err(Failure(
            GlgnnStatus::InvalidArgument,
            format!("buffer holds {capacity} bytes, {len} needed"),
        ));
    }
    ptr::copy_nonoverlapping(s.as_ptr().cast::<c_char>(), buf, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn glgnn_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn glgnn_clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn glgnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a dataset directory. `row_normalize` is -1 for the dataset's own
/// setting, 0 to disable and 1 to enable feature row normalization.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn glgnn_dataset_load(path: *const c_char, row_normalize: i32, out: *mut *mut GlgnnDataset) -> GlgnnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let dir = path_arg(path, "path")?;
        let row_normalize = match row_normalize {
            -1 => None,
            0 => Some(false),
            1 => Some(true),
            other => {
                return Err(Failure(
                    GlgnnStatus::InvalidArgument,
                    format!("row_normalize must be -1, 0 or 1, got {other}"),
                ))
            }
        };
        let inner = load_dataset_with(&dir, LoadOptions { row_normalize })?;
        *out = Box::into_raw(Box::new(GlgnnDataset { inner }));
        Ok(())
    })
}

/// Generates a stochastic block model dataset with `num_blocks` communities of
/// the given sizes.
///
/// # Safety
/// `block_sizes` must point to `num_blocks` values and `out` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn glgnn_dataset_generate_sbm(
    block_sizes: *const usize,
    num_blocks: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    noise: f64,
    seed: u64,
    out: *mut *mut GlgnnDataset,
) -> GlgnnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if block_sizes.is_null() && num_blocks > 0 {
            return Err(null("block_sizes"));
        }
        let blocks = if num_blocks == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(block_sizes, num_blocks).to_vec()
        };
        let spec = SbmSpec {
            blocks,
            p_in,
            p_out,
            feature_dim,
            noise,
            seed,
        };
        let inner = generate_sbm(&spec)?;
        *out = Box::into_raw(Box::new(GlgnnDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `ds` and `info` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn glgnn_dataset_info(ds: *const GlgnnDataset, info: *mut GlgnnDatasetInfo) -> GlgnnStatus {
    guard(|| {
        let ds = &obj(ds, "dataset")?.inner;
        *out_ptr(info, "info")? = GlgnnDatasetInfo {
            num_nodes: ds.num_nodes(),
            num_features: ds.num_features(),
            num_classes: ds.num_classes(),
            num_edges: ds.graph().num_edges(),
        };
        Ok(())
    })
}

/// # Safety
/// `ds` must come from a glgnn constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn glgnn_dataset_free(ds: *mut GlgnnDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// A configuration holding the defaults.
#[no_mangle]
pub extern "C" fn glgnn_config_new() -> *mut GlgnnConfig {
    Box::into_raw(Box::new(GlgnnConfig {
        inner: TrainConfig::default(),
    }))
}

/// Sets one `key` to `value` using the same keys as the command line.
///
/// # Safety
/// `cfg` must be valid; `key` and `value` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn glgnn_config_set(cfg: *mut GlgnnConfig, key: *const c_char, value: *const c_char) -> GlgnnStatus {
    guard(|| {
        let cfg = out_ptr(cfg, "config")?;
        let key = str_arg(key, "key")?;
        let value = str_arg(value, "value")?;
        cfg.inner.set(key, value)?;
        Ok(())
    })
}

/// Writes the value of `key` into `buf`. `needed` (optional) receives the
/// size including the terminator; pass a null `buf` with zero capacity to
/// query it.
///
/// # Safety
/// `cfg` and `key` must be valid; `buf` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn glgnn_config_get(
    cfg: *const GlgnnConfig,
    key: *const c_char,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> GlgnnStatus {
    guard(|| {
        let cfg = &obj(cfg, "config")?.inner;
        let key = str_arg(key, "key")?;
        let value = cfg
            .get(key)
            .ok_or_else(|| Failure(GlgnnStatus::Config, format!("unknown config key {key:?}")))?;
        write_str(&value, buf, capacity, needed)
    })
}

/// # Safety
/// `cfg` must come from [`glgnn_config_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn glgnn_config_free(cfg: *mut GlgnnConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Trains on the named split of `ds`.
///
/// # Safety
/// `ds`, `cfg`, `split` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn glgnn_train(
    ds: *const GlgnnDataset,
    split: *const c_char,
    cfg: *const GlgnnConfig,
    out: *mut *mut GlgnnRun,
) -> GlgnnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ds = &obj(ds, "dataset")?.inner;
        let config = obj(cfg, "config")?.inner.clone();
        let split = ds.split(str_arg(split, "split")?)?;
        let outcome = train(ds, split, &config)?;
        *out = Box::into_raw(Box::new(GlgnnRun {
            outcome,
            config,
            input_dim: ds.num_features(),
            num_classes: ds.num_classes(),
        }));
        Ok(())
    })
}

/// # Safety
/// `run` and `summary` must be valid.
#[no_mangle]
pub unsafe extern "C" fn glgnn_run_summary(run: *const GlgnnRun, summary: *mut GlgnnRunSummary) -> GlgnnStatus {
    guard(|| {
        let m = &obj(run, "run")?.outcome.metrics;
        *out_ptr(summary, "summary")? = GlgnnRunSummary {
            test_acc: m.test_acc,
            best_val_acc: m.best_val_acc,
            best_epoch: m.best_epoch,
            epochs_run: m.records.len(),
            stopped_early: m.stopped_early,
        };
        Ok(())
    })
}

/// Record of epoch number `index + 1`.
///
/// # Safety
/// `run` and `epoch` must be valid.
#[no_mangle]
pub unsafe extern "C" fn glgnn_run_epoch(run: *const GlgnnRun, index: usize, epoch: *mut GlgnnEpoch) -> GlgnnStatus {
    guard(|| {
        let records = &obj(run, "run")?.outcome.metrics.records;
        let r = records.get(index).ok_or_else(|| {
            Failure(
                GlgnnStatus::InvalidArgument,
                format!("epoch index {index} out of range ({} recorded)", records.len()),
            )
        })?;
        *out_ptr(epoch, "epoch")? = GlgnnEpoch {
            epoch: r.epoch,
            train_acc: r.train_acc,
            val_acc: r.val_acc,
            test_acc: r.test_acc,
            loss_ce: r.loss_ce,
            loss_gl: r.loss_gl,
        };
        Ok(())
    })
}

/// Writes the per-epoch metrics CSV.
///
/// # Safety
/// `run` and `path` must be valid.
#[no_mangle]
pub unsafe extern "C" fn glgnn_run_write_metrics(run: *const GlgnnRun, path: *const c_char) -> GlgnnStatus {
    guard(|| {
        let run = obj(run, "run")?;
        run.outcome.metrics.write_csv(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Saves the best-validation parameters as a checkpoint file.
///
/// # Safety
/// `run` and `path` must be valid.
#[no_mangle]
pub unsafe extern "C" fn glgnn_run_save_checkpoint(run: *const GlgnnRun, path: *const c_char) -> GlgnnStatus {
    guard(|| {
        let run = obj(run, "run")?;
        let ckpt = Checkpoint {
            config: run.config.clone(),
            input_dim: run.input_dim,
            num_classes: run.num_classes,
            params: run.outcome.params.clone(),
        };
        ckpt.save(Path::new(&path_arg(path, "path")?))?;
        Ok(())
    })
}

/// Eval-mode class probabilities for every node of `ds`, row-major
/// `num_nodes × num_classes`. `out` must hold `capacity` doubles.
///
/// # Safety
/// `run`, `ds` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn glgnn_run_predict(
    run: *const GlgnnRun,
    ds: *const GlgnnDataset,
    out: *mut f64,
    capacity: usize,
) -> GlgnnStatus {
    guard(|| {
        let run = obj(run, "run")?;
        let ds = &obj(ds, "dataset")?.inner;
        if ds.num_features() != run.input_dim || ds.num_classes() != run.num_classes {
            return Err(Failure(
                GlgnnStatus::InvalidArgument,
                format!(
                    "dataset has {} features and {} classes, the model expects {} and {}",
                    ds.num_features(),
                    ds.num_classes(),
                    run.input_dim,
                    run.num_classes
                ),
            ));
        }
        let needed = ds.num_nodes() * ds.num_classes();
        if out.is_null() {
            return Err(null("out"));
        }
        if capacity < needed {
            return Err(Failure(
                GlgnnStatus::InvalidArgument,
                format!("output holds {capacity} values, {needed} needed"),
            ));
        }
        let split = ds
            .splits()
            .next()
            .cloned()
            .unwrap_or_else(|| glgnn::data::Split {
                name: String::new(),
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            });
        let problem = Problem::new(ds, &split);
        let probs = predict_probs(&problem, &run.outcome.params, &run.config)?;
        std::slice::from_raw_parts_mut(out, needed).copy_from_slice(probs.data());
        Ok(())
    })
}

/// # Safety
/// `run` must come from [`glgnn_train`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn glgnn_run_free(run: *mut GlgnnRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Estimated multiply-accumulates of one forward pass, in millions.
///
/// # Safety
/// `ds`, `cfg` and `millions` must be valid.
#[no_mangle]
pub unsafe extern "C" fn glgnn_flops(ds: *const GlgnnDataset, cfg: *const GlgnnConfig, millions: *mut f64) -> GlgnnStatus {
    guard(|| {
        let ds = &obj(ds, "dataset")?.inner;
        let cfg = &obj(cfg, "config")?.inner;
        let dims = FlopDims {
            nodes: ds.num_nodes(),
            input_features: ds.num_features(),
            classes: ds.num_classes(),
            avg_degree: ds.graph().stats().input_edges as f64 * 2.0 / ds.num_nodes() as f64,
        };
        *out_ptr(millions, "millions")? = estimate_flops(&dims, cfg).total_millions();
        Ok(())
    })
}
