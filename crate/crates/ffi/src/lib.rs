//! C ABI over the altseq engine.
//!
//! Models are opaque handles created by `altseq_model_new` and released by
//! `altseq_model_free`. Every fallible call returns an `AltseqStatus`; on
//! failure the message is kept per thread and read back with
//! `altseq_last_error_message`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use altseq::bellman::{compute_thresholds_with_limit, compute_values, converge_xi, ThresholdFamily, ValueTable};
use altseq::estimators::{
    estimate_sigma2_regenerative, estimate_sigma2_replication, estimate_sigma2_series, EstimatorReport,
};
use altseq::numerics::GridSpec;
use altseq::policies::{run_policy, PolicyKind};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AltseqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Panic = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AltseqPolicy {
    Optimal = 0,
    Limit = 1,
    FixedThreshold = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AltseqMethod {
    Replication = 0,
    Regenerative = 1,
    CovarianceSeries = 2,
}

/// Inputs of `altseq_estimate_sigma2`. `n` is the horizon (replication) or
/// run length (regenerative); `max_lag` and `chain_len` apply to the series
/// method only.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AltseqSigma2Params {
    pub method: AltseqMethod,
    pub xi: f64,
    pub n: u64,
    pub reps: u64,
    pub max_lag: u64,
    pub chain_len: u64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AltseqEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl From<&EstimatorReport> for AltseqEstimate {
    fn from(r: &EstimatorReport) -> Self {
        Self {
            estimate: r.estimate,
            std_error: r.std_error,
            ci_low: r.ci95.0,
            ci_high: r.ci95.1,
        }
    }
}

/// Value and threshold tables on one grid.
pub struct AltseqModel {
    values: ValueTable,
    thresholds: ThresholdFamily,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(AltseqStatus, String);

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(AltseqStatus::InvalidArgument, msg.into())
}

fn numerical(e: impl std::fmt::Display) -> Fail {
    Fail(AltseqStatus::Numerical, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AltseqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AltseqStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            AltseqStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(m: *const AltseqModel) -> Result<&'a AltseqModel, Fail> {
    m.as_ref()
        .ok_or_else(|| Fail(AltseqStatus::NullPointer, "model handle is null".into()))
}

fn write_out<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(AltseqStatus::NullPointer, "output pointer is null".into()));
    }
    // SAFETY: non-null, and the caller promises it points to writable T.
    unsafe { out.write(v) };
    Ok(())
}

fn check_k(m: &AltseqModel, k: u32, from: u32) -> Result<usize, Fail> {
    let k = k as usize;
    let n = m.thresholds.horizon();
    if k < from as usize || k > n {
        return Err(invalid(format!("k = {k} outside {from}..={n}")));
    }
    Ok(k)
}

fn check_y(y: f64) -> Result<f64, Fail> {
    if (0.0..=1.0).contains(&y) {
        Ok(y)
    } else {
        Err(invalid(format!("y = {y} outside [0, 1]")))
    }
}

/// Builds the tables for grid step `grid_h` and horizon `horizon`; the
/// limit `ξ` is iterated to tolerance `tol_xi`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn altseq_model_new(
    grid_h: f64,
    horizon: u32,
    tol_xi: f64,
    out: *mut *mut AltseqModel,
) -> AltseqStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail(AltseqStatus::NullPointer, "output pointer is null".into()));
        }
        let grid = GridSpec::new(grid_h).map_err(|e| invalid(e.to_string()))?;
        if horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        if tol_xi.is_nan() || tol_xi <= 0.0 {
            return Err(invalid(format!("tol_xi = {tol_xi} must be positive")));
        }
        let values = compute_values(grid, horizon as usize).map_err(numerical)?;
        let (xi, _) = converge_xi(grid, tol_xi).map_err(numerical)?;
        let thresholds = compute_thresholds_with_limit(&values, xi).map_err(numerical)?;
        let model = Box::new(AltseqModel { values, thresholds });
        write_out(out, Box::into_raw(model))
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from `altseq_model_new` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn altseq_model_free(model: *mut AltseqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn altseq_model_horizon(model: *const AltseqModel, out: *mut u32) -> AltseqStatus {
    guard(|| {
        let m = model_ref(model)?;
        write_out(out, m.thresholds.horizon() as u32)
    })
}

/// `v_k(y)` for `0 <= k <= horizon`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn altseq_value(model: *const AltseqModel, k: u32, y: f64, out: *mut f64) -> AltseqStatus {
    guard(|| {
        let m = model_ref(model)?;
        let k = check_k(m, k, 0)?;
        let y = check_y(y)?;
        write_out(out, m.values.v(k).eval_unchecked(y))
    })
}

/// `g_k(y)` for `1 <= k <= horizon`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn altseq_threshold(model: *const AltseqModel, k: u32, y: f64, out: *mut f64) -> AltseqStatus {
    guard(|| {
        let m = model_ref(model)?;
        let k = check_k(m, k, 1)?;
        let y = check_y(y)?;
        write_out(out, m.thresholds.threshold(k, y))
    })
}

/// `ξ_k` for `1 <= k <= horizon`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn altseq_xi(model: *const AltseqModel, k: u32, out: *mut f64) -> AltseqStatus {
    guard(|| {
        let m = model_ref(model)?;
        let k = check_k(m, k, 1)?;
        write_out(out, m.thresholds.xi(k))
    })
}

/// The limit `ξ`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn altseq_xi_limit(model: *const AltseqModel, out: *mut f64) -> AltseqStatus {
    guard(|| {
        let m = model_ref(model)?;
        write_out(out, m.thresholds.xi_limit())
    })
}

/// Runs a policy over `n` caller-supplied uniforms. `c` is the level of the
/// fixed-threshold policy and is ignored otherwise; the limit policy uses
/// the model's `ξ`.
///
/// # Safety
/// `model` must be a live handle, `uniforms` must point to `n` readable
/// doubles, and the two output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn altseq_run_policy(
    model: *const AltseqModel,
    policy: AltseqPolicy,
    c: f64,
    uniforms: *const f64,
    n: usize,
    selections: *mut u32,
    final_state: *mut f64,
) -> AltseqStatus {
    guard(|| {
        let m = model_ref(model)?;
        if uniforms.is_null() && n > 0 {
            return Err(Fail(AltseqStatus::NullPointer, "uniforms pointer is null".into()));
        }
        let xs: &[f64] = if n == 0 { &[] } else { std::slice::from_raw_parts(uniforms, n) };
        let kind = match policy {
            AltseqPolicy::Optimal => PolicyKind::Optimal(&m.thresholds),
            AltseqPolicy::Limit => PolicyKind::Limit {
                xi: m.thresholds.xi_limit(),
            },
            AltseqPolicy::FixedThreshold => PolicyKind::FixedThreshold { c },
        };
        let run = run_policy(&kind, n, xs.iter().copied(), false).map_err(|e| invalid(e.to_string()))?;
        write_out(selections, run.selections as u32)?;
        write_out(final_state, run.final_state)
    })
}

/// Estimates the variance constant of the limiting policy.
///
/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn altseq_estimate_sigma2(
    params: *const AltseqSigma2Params,
    out: *mut AltseqEstimate,
) -> AltseqStatus {
    guard(|| {
        let p = params
            .as_ref()
            .ok_or_else(|| Fail(AltseqStatus::NullPointer, "params pointer is null".into()))?;
        let report = match p.method {
            AltseqMethod::Replication => {
                estimate_sigma2_replication(p.n as usize, p.reps as usize, &PolicyKind::Limit { xi: p.xi }, p.seed)
            }
            AltseqMethod::Regenerative => estimate_sigma2_regenerative(p.n as usize, p.xi, p.seed),
            AltseqMethod::CovarianceSeries => {
                estimate_sigma2_series(p.xi, p.max_lag as usize, p.reps as usize, p.chain_len as usize, p.seed)
            }
        }
        .map_err(|e| invalid(e.to_string()))?;
        write_out(out, AltseqEstimate::from(&report))
    })
}

/// Copies the calling thread's last error message into `buf` (nul
/// terminated, truncated to `len`) and returns the full message length, or
/// 0 when there is none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn altseq_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn altseq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
