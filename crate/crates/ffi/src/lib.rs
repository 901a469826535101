//! C interface to `kp-hysteresis`.
//!
//! Handles are opaque and owned by the caller once returned; free them with
//! the matching `*_free`. Every function returns a [`KphStatus`]; on failure
//! a message is available from [`kph_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, UnwindSafe};
use std::ptr;
use std::slice;

use kp_hysteresis::analysis::equilibria;
use kp_hysteresis::config::ExperimentConfig;
use kp_hysteresis::kp_model::{make_saturated_play, InitialMemory, KpModel, PlayElement};
use kp_hysteresis::simulator::{simulate, Trace};
use kp_hysteresis::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KphStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidCurve = 3,
    Uninitialized = 4,
    UnboundedRange = 5,
    Divergence = 6,
    NonConvergence = 7,
    Config = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Trace column selector for [`kph_trace_column`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KphColumn {
    T = 0,
    R = 1,
    U = 2,
    W = 3,
    E = 4,
}

/// Hysteresis model with its element memories.
pub struct KphModel(KpModel);

/// Recorded simulation.
pub struct KphTrace(Trace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: KphStatus, msg: impl Into<String>) -> KphStatus {
    set_error(msg.into());
    status
}

fn status_of(err: &Error) -> KphStatus {
    match err {
        Error::InvalidCurve(_) | Error::CurveOrdering { .. } => KphStatus::InvalidCurve,
        Error::InvalidArgument(_) | Error::Estimation(_) | Error::NotSteady { .. } => KphStatus::InvalidArgument,
        Error::Uninitialized => KphStatus::Uninitialized,
        Error::UnboundedRange(_) => KphStatus::UnboundedRange,
        Error::Divergence { .. } => KphStatus::Divergence,
        Error::NonConvergence { .. } => KphStatus::NonConvergence,
        Error::Config(_) => KphStatus::Config,
    }
}

fn report(err: Error) -> KphStatus {
    fail(status_of(&err), err.to_string())
}

/// Runs `f`, turning panics into [`KphStatus::Panic`].
fn guard(f: impl FnOnce() -> KphStatus + UnwindSafe) -> KphStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(f).unwrap_or_else(|_| fail(KphStatus::Panic, "panic inside kp_hysteresis"))
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(KphStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn kph_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// The three-element model with output range [0, 4].
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn kph_model_default(out: *mut *mut KphModel) -> KphStatus {
    guard(|| {
        non_null!(out);
        *out = Box::into_raw(Box::new(KphModel(KpModel::default_triple())));
        KphStatus::Ok
    })
}

/// Parallel sum of `count` saturated plays: element `i` has weight
/// `weights[i]` and boundary curves `clamp(u ± rhos[i], sat_lo[i], sat_hi[i])`.
/// Infinite limits disable saturation on that side.
///
/// # Safety
/// The four arrays must hold `count` values each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kph_model_new_saturated(
    count: usize,
    weights: *const f64,
    rhos: *const f64,
    sat_lo: *const f64,
    sat_hi: *const f64,
    offset: f64,
    out: *mut *mut KphModel,
) -> KphStatus {
    guard(|| {
        non_null!(weights, rhos, sat_lo, sat_hi, out);
        if count == 0 {
            return fail(KphStatus::InvalidArgument, "model needs at least one element");
        }
        let (w, r, lo, hi) = (
            slice::from_raw_parts(weights, count),
            slice::from_raw_parts(rhos, count),
            slice::from_raw_parts(sat_lo, count),
            slice::from_raw_parts(sat_hi, count),
        );
        let elements: Result<Vec<_>, Error> =
            (0..count).map(|i| PlayElement::new(w[i], make_saturated_play(r[i], lo[i], hi[i], 1.0)?)).collect();
        match elements.and_then(|e| KpModel::new(e, offset)) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(KphModel(m)));
                KphStatus::Ok
            }
            Err(e) => report(e),
        }
    })
}

/// Initializes the memories at `u0`. With `memories == NULL` every element
/// starts from zero clipped into its band; otherwise `count` must equal the
/// element count. The initial output is written to `out_w`.
///
/// # Safety
/// `model` must come from this library; `memories` must hold `count` values.
#[no_mangle]
pub unsafe extern "C" fn kph_model_init(
    model: *mut KphModel,
    u0: f64,
    memories: *const f64,
    count: usize,
    out_w: *mut f64,
) -> KphStatus {
    guard(|| {
        non_null!(model, out_w);
        let rule = if memories.is_null() {
            InitialMemory::Virgin
        } else {
            InitialMemory::Explicit(slice::from_raw_parts(memories, count).to_vec())
        };
        match (*model).0.init_with(u0, &rule) {
            Ok(w) => {
                *out_w = w;
                KphStatus::Ok
            }
            Err(e) => report(e),
        }
    })
}

/// Feeds one input sample and writes `H(u)` to `out_w`.
///
/// # Safety
/// `model` must come from this library and `out_w` be writable.
#[no_mangle]
pub unsafe extern "C" fn kph_model_update(model: *mut KphModel, u: f64, out_w: *mut f64) -> KphStatus {
    guard(|| {
        non_null!(model, out_w);
        match (*model).0.h_update(u) {
            Ok(w) => {
                *out_w = w;
                KphStatus::Ok
            }
            Err(e) => report(e),
        }
    })
}

/// Bounds on the output over all trajectories.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kph_model_output_range(model: *const KphModel, lo: *mut f64, hi: *mut f64) -> KphStatus {
    guard(|| {
        non_null!(model, lo, hi);
        match (*model).0.output_range() {
            Ok((a, b)) => {
                *lo = a;
                *hi = b;
                KphStatus::Ok
            }
            Err(e) => report(e),
        }
    })
}

/// Equilibria at `level`: largest `u1` on the left envelope and smallest
/// `u2` on the right one. Absent values are flagged with `*has_u* = 0`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kph_model_equilibria(
    model: *const KphModel,
    level: f64,
    u1: *mut f64,
    has_u1: *mut i32,
    u2: *mut f64,
    has_u2: *mut i32,
) -> KphStatus {
    guard(|| {
        non_null!(model, u1, has_u1, u2, has_u2);
        let eq = equilibria(&(*model).0, level);
        *has_u1 = eq.u1().is_some() as i32;
        *u1 = eq.u1().unwrap_or(f64::NAN);
        *has_u2 = eq.u2().is_some() as i32;
        *u2 = eq.u2().unwrap_or(f64::NAN);
        KphStatus::Ok
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn kph_model_free(model: *mut KphModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs the experiment described by the TOML text `config` at gain `gain`.
///
/// # Safety
/// `config` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kph_simulate_toml(config: *const c_char, gain: f64, out: *mut *mut KphTrace) -> KphStatus {
    guard(|| {
        non_null!(config, out);
        let Ok(text) = CStr::from_ptr(config).to_str() else {
            return fail(KphStatus::Config, "config is not valid UTF-8");
        };
        let result = ExperimentConfig::parse(text, &[]).and_then(|c| c.sim_config(gain)).and_then(|s| simulate(&s));
        match result {
            Ok(trace) => {
                *out = Box::into_raw(Box::new(KphTrace(trace)));
                KphStatus::Ok
            }
            Err(e) => report(e),
        }
    })
}

/// Number of recorded rows, or 0 for a null handle.
///
/// # Safety
/// `trace` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn kph_trace_len(trace: *const KphTrace) -> usize {
    if trace.is_null() {
        0
    } else {
        (*trace).0.len()
    }
}

/// Copies one column into `buf`, which must hold at least `kph_trace_len` values.
///
/// # Safety
/// `buf` must be writable for `buf_len` values.
#[no_mangle]
pub unsafe extern "C" fn kph_trace_column(trace: *const KphTrace, column: KphColumn, buf: *mut f64, buf_len: usize) -> KphStatus {
    guard(|| {
        non_null!(trace, buf);
        let tr = &(*trace).0;
        let data = match column {
            KphColumn::T => &tr.t,
            KphColumn::R => &tr.r,
            KphColumn::U => &tr.u,
            KphColumn::W => &tr.w,
            KphColumn::E => &tr.e,
        };
        if buf_len < data.len() {
            return fail(KphStatus::BufferTooSmall, format!("column has {} rows, buffer holds {buf_len}", data.len()));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        KphStatus::Ok
    })
}

/// # Safety
/// `trace` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn kph_trace_free(trace: *mut KphTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}
