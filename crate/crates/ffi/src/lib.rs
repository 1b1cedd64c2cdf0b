//! C ABI over `smartctx`.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns a
//! [`SmartctxStatus`]; on failure [`smartctx_last_error`] describes what went
//! wrong on the calling thread. Strings returned through out-parameters are
//! owned by the caller and released with [`smartctx_string_free`].
//!
//! Snapshots are passed as JSON objects with the fields `time_of_cycle`,
//! `accel_log_power`, `gps` (`[lat, lon]` or null), `cell_id` (string or
//! null) and `prior_usage` (three most-recent-first label arrays for web,
//! phone and app).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use serde::Serialize;
use smartctx::estimate::{fit_estimator, CombinedEstimator, EstimatorSpec};
use smartctx::harness::loocv_report;
use smartctx::smartcontext::{CostModel, SmartContextPolicy};
use smartctx::synth::{generate_trace, SynthConfig};
use smartctx::trace::{ContextSnapshot, Trace, UsageKind, DEFAULT_VOCAB_CAP};
use smartctx::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmartctxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Data = 5,
    Panic = 6,
}

/// A loaded or generated trace.
pub struct SmartctxTrace {
    inner: Trace,
}

/// A fitted per-user estimator.
pub struct SmartctxEstimator {
    inner: CombinedEstimator,
}

/// A trained SmartContext policy.
pub struct SmartctxPolicy {
    inner: SmartContextPolicy,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(SmartctxStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => SmartctxStatus::Io,
            Error::Parse { .. } | Error::NonMonotonic { .. } | Error::PriorChain { .. } | Error::Json(_) | Error::Csv(_) => {
                SmartctxStatus::Parse
            }
            Error::InvalidArgument(_) => SmartctxStatus::InvalidArgument,
            _ => SmartctxStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SmartctxStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SmartctxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SmartctxStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            SmartctxStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SmartctxStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(SmartctxStatus::NullPointer, format!("{name} is null")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(SmartctxStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn kind_arg(kind: *const c_char) -> Result<UsageKind, Failure> {
    let s = unsafe { str_arg(kind, "kind")? };
    s.parse().map_err(Failure::from)
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| invalid("output contains an interior NUL"))
}

fn snapshot_arg(json: *const c_char) -> Result<ContextSnapshot, Failure> {
    let s = unsafe { str_arg(json, "snapshot")? };
    let snap: ContextSnapshot =
        serde_json::from_str(s).map_err(|e| Failure(SmartctxStatus::Parse, format!("snapshot: {e}")))?;
    snap.validate().map_err(invalid)?;
    Ok(snap)
}

/// Optional estimator spec as JSON; null selects every source with `bins` bins.
fn spec_arg(spec_json: *const c_char, bins: usize) -> Result<EstimatorSpec, Failure> {
    if spec_json.is_null() {
        if bins == 0 {
            return Err(invalid("bins must be at least 1"));
        }
        return Ok(EstimatorSpec::all_sources(bins));
    }
    let s = unsafe { str_arg(spec_json, "spec")? };
    serde_json::from_str(s).map_err(|e| Failure(SmartctxStatus::Parse, format!("spec: {e}")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn smartctx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string. Valid
/// until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn smartctx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn smartctx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads a JSONL trace.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smartctx_trace_read(path: *const c_char, out: *mut *mut SmartctxTrace) -> SmartctxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let p = str_arg(path, "path")?;
        let trace = Trace::read(Path::new(p))?;
        *out = Box::into_raw(Box::new(SmartctxTrace { inner: trace }));
        Ok(())
    })
}

/// Generates a synthetic trace with default settings apart from the given ones.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smartctx_trace_synth(
    users: usize,
    scale: f64,
    lambda: f64,
    seed: u64,
    out: *mut *mut SmartctxTrace,
) -> SmartctxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let config = SynthConfig {
            n_users: users,
            scale,
            lambda,
            seed,
            ..SynthConfig::default()
        };
        config.validate()?;
        let trace = generate_trace(&config)?;
        *out = Box::into_raw(Box::new(SmartctxTrace { inner: trace }));
        Ok(())
    })
}

/// # Safety
/// `trace` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn smartctx_trace_write(trace: *const SmartctxTrace, path: *const c_char) -> SmartctxStatus {
    guard(|| {
        let t = ref_arg(trace, "trace")?;
        let p = str_arg(path, "path")?;
        t.inner.write(Path::new(p))?;
        Ok(())
    })
}

/// # Safety
/// `trace` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smartctx_trace_user_count(trace: *const SmartctxTrace, out: *mut usize) -> SmartctxStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ref_arg(trace, "trace")?.inner.users.len();
        Ok(())
    })
}

/// # Safety
/// `trace` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smartctx_trace_event_count(trace: *const SmartctxTrace, out: *mut usize) -> SmartctxStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ref_arg(trace, "trace")?.inner.event_count();
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn smartctx_trace_free(trace: *mut SmartctxTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Mean LOOCV accuracy over users. `spec_json` may be null for every source
/// with `bins` bins.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn smartctx_loocv_accuracy(
    trace: *const SmartctxTrace,
    kind: *const c_char,
    spec_json: *const c_char,
    bins: usize,
    r: usize,
    out: *mut f64,
) -> SmartctxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let t = ref_arg(trace, "trace")?;
        let kind = kind_arg(kind)?;
        let spec = spec_arg(spec_json, bins)?;
        if r == 0 {
            return Err(invalid("r must be at least 1"));
        }
        *out = loocv_report(&t.inner, kind, &spec, DEFAULT_VOCAB_CAP, r)?.mean_accuracy();
        Ok(())
    })
}

fn user_events(
    t: &SmartctxTrace,
    user: &str,
    kind: UsageKind,
) -> Result<(Vec<smartctx::trace::LabeledEvent>, smartctx::trace::Vocabulary), Failure> {
    let u = t.inner.user(user).ok_or_else(|| invalid(format!("unknown user {user:?}")))?;
    let events = u.events_of(kind);
    let vocab = smartctx::trace::build_vocabulary(events.iter().map(|e| &e.outcome), kind, DEFAULT_VOCAB_CAP)?;
    Ok((events, vocab))
}

/// Fits an estimator on all of one user's events of `kind`.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated; `spec_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn smartctx_estimator_train(
    trace: *const SmartctxTrace,
    user: *const c_char,
    kind: *const c_char,
    spec_json: *const c_char,
    bins: usize,
    out: *mut *mut SmartctxEstimator,
) -> SmartctxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let t = ref_arg(trace, "trace")?;
        let user = str_arg(user, "user")?;
        let kind = kind_arg(kind)?;
        let spec = spec_arg(spec_json, bins)?;
        let (events, vocab) = user_events(t, user, kind)?;
        let refs: Vec<_> = events.iter().collect();
        let est = fit_estimator(&spec, &refs, &vocab)?;
        *out = Box::into_raw(Box::new(SmartctxEstimator { inner: est }));
        Ok(())
    })
}

/// # Safety
/// `json` must be NUL-terminated; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smartctx_estimator_from_json(
    json: *const c_char,
    out: *mut *mut SmartctxEstimator,
) -> SmartctxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let s = str_arg(json, "json")?;
        let est = CombinedEstimator::from_json(s)?;
        *out = Box::into_raw(Box::new(SmartctxEstimator { inner: est }));
        Ok(())
    })
}

/// # Safety
/// `est` must be a live handle; `out` a valid pointer. Free the string with
/// [`smartctx_string_free`].
#[no_mangle]
pub unsafe extern "C" fn smartctx_estimator_to_json(
    est: *const SmartctxEstimator,
    out: *mut *mut c_char,
) -> SmartctxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let e = ref_arg(est, "estimator")?;
        *out = to_c_string(e.inner.to_json())?;
        Ok(())
    })
}

/// # Safety
/// `est` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smartctx_estimator_outcome_count(
    est: *const SmartctxEstimator,
    out: *mut usize,
) -> SmartctxStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ref_arg(est, "estimator")?.inner.k();
        Ok(())
    })
}

#[derive(Serialize)]
struct EstimateJson {
    labels: Vec<String>,
    probabilities: Vec<f64>,
}

/// Top-`r` labels for a snapshot, as JSON `{"labels": [...],
/// "probabilities": [...]}`, most probable first.
///
/// # Safety
/// Pointers must be valid; `snapshot_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn smartctx_estimator_estimate(
    est: *const SmartctxEstimator,
    snapshot_json: *const c_char,
    r: usize,
    out: *mut *mut c_char,
) -> SmartctxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let e = &ref_arg(est, "estimator")?.inner;
        if r == 0 {
            return Err(invalid("r must be at least 1"));
        }
        let snap = snapshot_arg(snapshot_json)?;
        let post = e.posterior(&snap);
        let set = smartctx::estimate::map_estimate(&post, r);
        let body = EstimateJson {
            labels: set.outcomes.iter().map(|&g| e.vocab.label(g).to_string()).collect(),
            probabilities: set.outcomes.iter().map(|&g| post.0[g]).collect(),
        };
        *out = to_c_string(serde_json::to_string(&body).map_err(Error::from)?)?;
        Ok(())
    })
}

/// # Safety
/// `est` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn smartctx_estimator_free(est: *mut SmartctxEstimator) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Trains a SmartContext policy on all of one user's events of `kind` with
/// the default energy costs.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated; `spec_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn smartctx_policy_train(
    trace: *const SmartctxTrace,
    user: *const c_char,
    kind: *const c_char,
    spec_json: *const c_char,
    bins: usize,
    r: usize,
    out: *mut *mut SmartctxPolicy,
) -> SmartctxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let t = ref_arg(trace, "trace")?;
        let user = str_arg(user, "user")?;
        let kind = kind_arg(kind)?;
        let spec = spec_arg(spec_json, bins)?;
        if r == 0 {
            return Err(invalid("r must be at least 1"));
        }
        let (events, vocab) = user_events(t, user, kind)?;
        let (kept, _) = vocab.retain(&events);
        let policy = SmartContextPolicy::train(&spec, &kept, &vocab, CostModel::default(), r)?;
        *out = Box::into_raw(Box::new(SmartctxPolicy { inner: policy }));
        Ok(())
    })
}

#[derive(Serialize)]
struct PolicyJson {
    labels: Vec<String>,
    estimated_accuracy: f64,
    sources_used: Vec<String>,
    energy_spent: f64,
    target_met: bool,
}

/// Estimates one snapshot, reading costly sources until the posterior mass
/// of the response set reaches `target`. The result is a JSON object with
/// `labels`, `estimated_accuracy`, `sources_used`, `energy_spent` and
/// `target_met`.
///
/// # Safety
/// Pointers must be valid; `snapshot_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn smartctx_policy_estimate(
    policy: *const SmartctxPolicy,
    snapshot_json: *const c_char,
    target: f64,
    out: *mut *mut c_char,
) -> SmartctxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let p = &ref_arg(policy, "policy")?.inner;
        if !(0.0..=1.0).contains(&target) {
            return Err(invalid("target must lie in [0, 1]"));
        }
        let snap = snapshot_arg(snapshot_json)?;
        let res = p.estimate_event(&snap, target);
        let body = PolicyJson {
            labels: res
                .response
                .outcomes
                .iter()
                .map(|&g| p.estimator.vocab.label(g).to_string())
                .collect(),
            estimated_accuracy: res.estimated_accuracy,
            sources_used: res.sources_used.iter().map(|s| s.as_str().to_string()).collect(),
            energy_spent: res.energy_spent,
            target_met: res.target_met,
        };
        *out = to_c_string(serde_json::to_string(&body).map_err(Error::from)?)?;
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn smartctx_policy_free(policy: *mut SmartctxPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Short lowercase name of a status code.
#[no_mangle]
pub extern "C" fn smartctx_status_name(status: SmartctxStatus) -> *const c_char {
    let s: &'static str = match status {
        SmartctxStatus::Ok => "ok\0",
        SmartctxStatus::NullPointer => "null_pointer\0",
        SmartctxStatus::InvalidArgument => "invalid_argument\0",
        SmartctxStatus::Io => "io\0",
        SmartctxStatus::Parse => "parse\0",
        SmartctxStatus::Data => "data\0",
        SmartctxStatus::Panic => "panic\0",
    };
    s.as_ptr().cast()
}
