//! C ABI for `kingman-lab`.
//!
//! Every fallible call returns a [`KmStatus`]; on failure the message is
//! available from [`km_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. No call unwinds across
//! the boundary: panics are caught and reported as `KM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kingman_lab::chain::CountVector;
use kingman_lab::coalescent::{lengths_from_tree, order_counts, sample_merge_history, sample_times};
use kingman_lab::coalescent::{InterCoalescenceTimes, MergeHistory};
use kingman_lab::coupling::optimal_coupling;
use kingman_lab::harness::{run_clt_experiment, CltSummary, ExperimentConfig, Mode};
use kingman_lab::moments::{mean_length, mean_w, to_f64, variance_w};
use kingman_lab::rng::stream;
use kingman_lab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KmStatus {
    Ok = 0,
    InvalidArgument = 1,
    UnsupportedRegime = 2,
    ResourceLimit = 3,
    Io = 4,
    NullPointer = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> KmStatus {
    match e {
        Error::InvalidArgument(_) => KmStatus::InvalidArgument,
        Error::UnsupportedRegime(_) => KmStatus::UnsupportedRegime,
        Error::ResourceLimit(_) => KmStatus::ResourceLimit,
        Error::Io(_) => KmStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), KmError>) -> KmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KmStatus::Ok,
        Ok(Err(KmError::Lab(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(KmError::Null(what))) => {
            set_error(format!("null pointer passed for {what}"));
            KmStatus::NullPointer
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            KmStatus::Panic
        }
    }
}

enum KmError {
    Lab(Error),
    Null(&'static str),
}

impl From<Error> for KmError {
    fn from(e: Error) -> Self {
        KmError::Lab(e)
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<(), KmError> {
    if p.is_null() {
        Err(KmError::Null(what))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn km_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn km_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A sampled coalescent tree: merge history and inter-coalescence times.
pub struct KmTree {
    history: MergeHistory,
    times: InterCoalescenceTimes,
}

/// Samples a tree with `n` leaves from stream `replicate` of `seed`.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn km_tree_sample(n: usize, seed: u64, replicate: u64, out: *mut *mut KmTree) -> KmStatus {
    guard(|| {
        non_null(out, "out")?;
        let mut rng = stream(seed, replicate);
        let history = sample_merge_history(n, &mut rng)?;
        let times = sample_times(n, &mut rng)?;
        *out = Box::into_raw(Box::new(KmTree { history, times }));
        Ok(())
    })
}

/// Releases a tree. Null is ignored.
///
/// # Safety
/// `tree` must come from [`km_tree_sample`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn km_tree_free(tree: *mut KmTree) {
    if !tree.is_null() {
        drop(Box::from_raw(tree));
    }
}

/// Number of leaves, or 0 for a null handle.
///
/// # Safety
/// `tree` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_tree_leaves(tree: *const KmTree) -> usize {
    tree.as_ref().map_or(0, |t| t.history.n())
}

/// Writes the raw and smoothed order lengths for `r = 1..=s` into two
/// arrays of length `s`. Either output may be null.
///
/// # Safety
/// `tree` must be a live handle; non-null outputs must hold `s` doubles.
#[no_mangle]
pub unsafe extern "C" fn km_tree_order_lengths(
    tree: *const KmTree,
    s: usize,
    raw: *mut f64,
    smoothed: *mut f64,
) -> KmStatus {
    guard(|| {
        non_null(tree, "tree")?;
        let t = &*tree;
        let lengths = lengths_from_tree(&t.history, &t.times, s)?;
        if !raw.is_null() {
            ptr::copy_nonoverlapping(lengths.raw.as_ptr(), raw, s);
        }
        if !smoothed.is_null() {
            ptr::copy_nonoverlapping(lengths.smoothed.as_ptr(), smoothed, s);
        }
        Ok(())
    })
}

/// Writes `W_k(1), ..., W_k(s)` into `out`.
///
/// # Safety
/// `tree` must be a live handle and `out` must hold `s` values.
#[no_mangle]
pub unsafe extern "C" fn km_tree_order_counts(tree: *const KmTree, k: usize, s: usize, out: *mut u32) -> KmStatus {
    guard(|| {
        non_null(tree, "tree")?;
        non_null(out, "out")?;
        let t = &*tree;
        let n = t.history.n();
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("level {k} outside 1..={n}")).into());
        }
        let path = order_counts(&t.history, s)?;
        ptr::copy_nonoverlapping(path.at(k).as_ptr(), out, s);
        Ok(())
    })
}

/// `E W_k(r)` for a tree with `n` leaves.
///
/// # Safety
/// `out` must be valid for writing one double.
#[no_mangle]
pub unsafe extern "C" fn km_mean_w(n: usize, k: usize, r: usize, out: *mut f64) -> KmStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = to_f64(&mean_w(n, k, r)?);
        Ok(())
    })
}

/// `Var W_k(r)`; `KM_STATUS_UNSUPPORTED_REGIME` when `n <= 2r`.
///
/// # Safety
/// `out` must be valid for writing one double.
#[no_mangle]
pub unsafe extern "C" fn km_variance_w(n: usize, k: usize, r: usize, out: *mut f64) -> KmStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = to_f64(&variance_w(n, k, r)?.variance);
        Ok(())
    })
}

/// `E L^{n,r}`.
///
/// # Safety
/// `out` must be valid for writing one double.
#[no_mangle]
pub unsafe extern "C" fn km_mean_length(n: usize, r: usize, out: *mut f64) -> KmStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = to_f64(&mean_length(n, r)?);
        Ok(())
    })
}

/// Total variation distance between the joint one-step law at `(k, v)` and
/// the product of external one-step laws at `(k, v_tilde)`, both of length `s`.
///
/// # Safety
/// `v` and `v_tilde` must hold `s` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn km_coupling_tv(
    k: usize,
    s: usize,
    v: *const u32,
    v_tilde: *const u32,
    out: *mut f64,
) -> KmStatus {
    guard(|| {
        non_null(v, "v")?;
        non_null(v_tilde, "v_tilde")?;
        non_null(out, "out")?;
        let v = CountVector::new(k, std::slice::from_raw_parts(v, s).to_vec())?;
        let d = optimal_coupling(k, &v, std::slice::from_raw_parts(v_tilde, s))?;
        let tv = d.tv();
        *out = *tv.numer() as f64 / *tv.denom() as f64;
        Ok(())
    })
}

/// Result of a normal-limit experiment.
pub struct KmCltSummary {
    summary: CltSummary,
    json: CString,
}

/// Runs the normal-limit experiment on trees. `workers = 0` uses every core.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn km_clt_run(
    n: usize,
    s: usize,
    replicates: u64,
    seed: u64,
    workers: usize,
    out: *mut *mut KmCltSummary,
) -> KmStatus {
    guard(|| {
        non_null(out, "out")?;
        let config = ExperimentConfig::new(n, s, replicates, seed)?
            .with_mode(Mode::Tree)
            .with_workers((workers > 0).then_some(workers));
        let summary = run_clt_experiment(&config)?;
        let json = serde_json::to_string(&summary).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        let json = CString::new(json).expect("JSON has no NUL bytes");
        *out = Box::into_raw(Box::new(KmCltSummary { summary, json }));
        Ok(())
    })
}

/// The summary as JSON, owned by the handle.
///
/// # Safety
/// `summary` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_clt_summary_json(summary: *const KmCltSummary) -> *const c_char {
    summary.as_ref().map_or(ptr::null(), |s| s.json.as_ptr())
}

/// Rescaled sample mean of order `r` (1-based); NaN when out of range.
///
/// # Safety
/// `summary` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_clt_summary_mean(summary: *const KmCltSummary, r: usize) -> f64 {
    summary
        .as_ref()
        .and_then(|s| r.checked_sub(1).and_then(|i| s.summary.mean.get(i)).copied())
        .unwrap_or(f64::NAN)
}

/// Kolmogorov–Smirnov distance of order `r` to the standard normal; NaN
/// when out of range.
///
/// # Safety
/// `summary` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_clt_summary_ks(summary: *const KmCltSummary, r: usize) -> f64 {
    summary
        .as_ref()
        .and_then(|s| r.checked_sub(1).and_then(|i| s.summary.ks.get(i)).copied())
        .unwrap_or(f64::NAN)
}

/// Releases a summary. Null is ignored.
///
/// # Safety
/// `summary` must come from [`km_clt_run`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn km_clt_summary_free(summary: *mut KmCltSummary) {
    if !summary.is_null() {
        drop(Box::from_raw(summary));
    }
}
