//! C ABI over the pipetune simulator and RL environment.
//!
//! Conventions:
//! - Handles are opaque pointers created by `pt_*_new*` and released by the
//!   matching `pt_*_free`; every other function borrows them.
//! - Fallible calls return [`PtStatus`]; on failure a thread-local message is
//!   readable via [`pt_last_error`].
//! - Strings returned as `char*` are heap-allocated by this library and must
//!   be released with [`pt_string_free`].
//!
//! The JSON document accepted by the constructors carries the same
//! `pipeline` / `machine` / `workload` / `env` sections as the CLI's
//! experiment configs (an optional `allocation` selects the evaluated
//! allocation for one-shot simulation).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use serde::Deserialize;

use pipetune::alloc::{alloc_even, alloc_greedy_true, alloc_oracle_bruteforce};
use pipetune::env::{decode_action, Env, EnvConfig};
use pipetune::error::Error;
use pipetune::model::{
    pipeline_throughput, Allocation, MachineSpec, PipelineSpec, WorkloadSpec,
};

/// Result codes of fallible `pt_*` calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtStatus {
    PtOk = 0,
    /// A required pointer argument was null.
    PtNullPointer = 1,
    /// Input text was not valid UTF-8.
    PtInvalidUtf8 = 2,
    /// JSON parsing failed.
    PtParseError = 3,
    /// The document parsed but failed validation.
    PtInvalidSpec = 4,
    /// An index or buffer length did not match the environment.
    PtBadDimension = 5,
    /// The operation itself failed; see `pt_last_error`.
    PtRuntimeError = 6,
    /// A panic was caught at the boundary.
    PtPanic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_for(err: &Error) -> PtStatus {
    match err {
        Error::Json(_) => PtStatus::PtParseError,
        Error::InvalidSpec { .. } | Error::Config(_) => PtStatus::PtInvalidSpec,
        Error::DimensionMismatch(_) | Error::ActionOutOfRange { .. } => PtStatus::PtBadDimension,
        _ => PtStatus::PtRuntimeError,
    }
}

fn fail(err: &Error) -> PtStatus {
    set_last_error(&err.to_string());
    status_for(err)
}

/// Copies the most recent error message (UTF-8, NUL-terminated) into `buf`.
/// Returns the full message length in bytes excluding the terminator; when
/// the buffer is too small the message is truncated.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (the call then only
/// reports the length).
#[no_mangle]
pub unsafe extern "C" fn pt_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string. Never freed.
#[no_mangle]
pub extern "C" fn pt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[derive(Deserialize)]
struct SimDoc {
    pipeline: PipelineSpec,
    machine: MachineSpec,
    workload: WorkloadSpec,
    #[serde(default)]
    env: EnvConfig,
    #[serde(default)]
    allocation: Option<Allocation>,
}

unsafe fn parse_doc(json: *const c_char) -> Result<SimDoc, PtStatus> {
    if json.is_null() {
        set_last_error("config json pointer is null");
        return Err(PtStatus::PtNullPointer);
    }
    let text = CStr::from_ptr(json).to_str().map_err(|_| {
        set_last_error("config json is not valid UTF-8");
        PtStatus::PtInvalidUtf8
    })?;
    let doc: SimDoc = serde_json::from_str(text).map_err(|e| fail(&Error::Json(e)))?;
    doc.pipeline.validate().map_err(|e| fail(&e))?;
    doc.machine.validate().map_err(|e| fail(&e))?;
    doc.workload.validate().map_err(|e| fail(&e))?;
    doc.env.validate(&doc.pipeline).map_err(|e| fail(&e))?;
    Ok(doc)
}

fn to_c_string(text: String) -> *mut c_char {
    CString::new(text.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must have been returned by a `pt_*` function and not freed before.
#[no_mangle]
pub unsafe extern "C" fn pt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opaque RL environment handle.
pub struct PtEnv {
    env: Env,
}

/// Creates an environment from a JSON document. On success writes the handle
/// to `out_env`; release it with [`pt_env_free`].
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out_env` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn pt_env_new_from_json(
    config_json: *const c_char,
    out_env: *mut *mut PtEnv,
) -> PtStatus {
    if out_env.is_null() {
        set_last_error("out_env pointer is null");
        return PtStatus::PtNullPointer;
    }
    let result = catch_unwind(AssertUnwindSafe(|| {
        let doc = match parse_doc(config_json) {
            Ok(doc) => doc,
            Err(status) => return status,
        };
        match Env::new(doc.pipeline, doc.machine, doc.workload, doc.env) {
            Ok(mut env) => {
                if let Err(e) = env.reset() {
                    return fail(&e);
                }
                if let Some(alloc) = doc.allocation {
                    if let Err(e) = env.set_allocation(alloc) {
                        return fail(&e);
                    }
                }
                *out_env = Box::into_raw(Box::new(PtEnv { env }));
                PtStatus::PtOk
            }
            Err(e) => fail(&e),
        }
    }));
    result.unwrap_or_else(|_| {
        set_last_error("panic in pt_env_new_from_json");
        PtStatus::PtPanic
    })
}

/// Releases an environment handle. Null is ignored.
///
/// # Safety
/// `env` must originate from [`pt_env_new_from_json`] and not be used after.
#[no_mangle]
pub unsafe extern "C" fn pt_env_free(env: *mut PtEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

unsafe fn borrow_env<'a>(env: *const PtEnv) -> Result<&'a Env, PtStatus> {
    env.as_ref().map(|e| &e.env).ok_or_else(|| {
        set_last_error("env handle is null");
        PtStatus::PtNullPointer
    })
}

unsafe fn borrow_env_mut<'a>(env: *mut PtEnv) -> Result<&'a mut Env, PtStatus> {
    env.as_mut().map(|e| &mut e.env).ok_or_else(|| {
        set_last_error("env handle is null");
        PtStatus::PtNullPointer
    })
}

/// Number of knobs (r): CPU stages plus the prefetch knob when present.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pt_env_knobs(env: *const PtEnv) -> usize {
    borrow_env(env).map(|e| e.knobs()).unwrap_or(0)
}

/// Length of the observation vector (6 + knobs).
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pt_env_state_len(env: *const PtEnv) -> usize {
    borrow_env(env).map(|e| e.state_len()).unwrap_or(0)
}

/// Joint action count, 5^r.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pt_env_action_count(env: *const PtEnv) -> u64 {
    borrow_env(env).map(|e| e.action_count()).unwrap_or(0)
}

/// Current CPU budget.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pt_env_cpu_budget(env: *const PtEnv) -> u32 {
    borrow_env(env).map(|e| e.cpu_budget()).unwrap_or(0)
}

/// Resets the environment to the even-division allocation.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pt_env_reset(env: *mut PtEnv) -> PtStatus {
    let env = match borrow_env_mut(env) {
        Ok(e) => e,
        Err(s) => return s,
    };
    match env.reset() {
        Ok(_) => PtStatus::PtOk,
        Err(e) => fail(&e),
    }
}

/// Writes the current observation vector into `out` (length
/// [`pt_env_state_len`]).
///
/// # Safety
/// `env` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pt_env_state(env: *const PtEnv, out: *mut f64, len: usize) -> PtStatus {
    let env = match borrow_env(env) {
        Ok(e) => e,
        Err(s) => return s,
    };
    if out.is_null() {
        set_last_error("state buffer is null");
        return PtStatus::PtNullPointer;
    }
    let state = env.current_state().as_vector();
    if len < state.len() {
        set_last_error("state buffer too small");
        return PtStatus::PtBadDimension;
    }
    ptr::copy_nonoverlapping(state.as_ptr(), out, state.len());
    PtStatus::PtOk
}

/// Writes the per-joint-action feasibility mask (0/1 bytes) into `out`
/// (length [`pt_env_action_count`]).
///
/// # Safety
/// `env` must be a live handle; `out` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pt_env_feasible_mask(
    env: *const PtEnv,
    out: *mut u8,
    len: usize,
) -> PtStatus {
    let env = match borrow_env(env) {
        Ok(e) => e,
        Err(s) => return s,
    };
    if out.is_null() {
        set_last_error("mask buffer is null");
        return PtStatus::PtNullPointer;
    }
    let mask = env.feasible_mask();
    if len < mask.len() {
        set_last_error("mask buffer too small");
        return PtStatus::PtBadDimension;
    }
    for (i, feasible) in mask.iter().enumerate() {
        *out.add(i) = u8::from(*feasible);
    }
    PtStatus::PtOk
}

/// Writes the current allocation: CPU counts into `out_cpus` and the
/// prefetch unit count into `out_prefetch_units`.
///
/// # Safety
/// `env` must be a live handle; `out_cpus` must hold `len` u32 slots and
/// `out_prefetch_units` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pt_env_allocation(
    env: *const PtEnv,
    out_cpus: *mut u32,
    len: usize,
    out_prefetch_units: *mut u32,
) -> PtStatus {
    let env = match borrow_env(env) {
        Ok(e) => e,
        Err(s) => return s,
    };
    if out_cpus.is_null() || out_prefetch_units.is_null() {
        set_last_error("allocation output pointer is null");
        return PtStatus::PtNullPointer;
    }
    let alloc = env.allocation();
    if len < alloc.cpus.len() {
        set_last_error("cpu buffer too small");
        return PtStatus::PtBadDimension;
    }
    ptr::copy_nonoverlapping(alloc.cpus.as_ptr(), out_cpus, alloc.cpus.len());
    *out_prefetch_units = alloc.prefetch_units;
    PtStatus::PtOk
}

/// Result of one environment step.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PtStepOutcome {
    pub reward: f64,
    pub throughput_norm: f64,
    pub achieved_rate: f64,
    pub mem_used_mb: f64,
    pub cpu_budget: u32,
    /// Index of the bottleneck stage, or -1 during downtime.
    pub bottleneck_stage: i32,
    /// OOM event occurred on this step.
    pub crashed: bool,
    /// The action needed clamping or cancellation to stay feasible.
    pub clamped: bool,
}

/// Applies the joint action with the given index (base-5 positional code,
/// see the library docs) and advances one step. The new observation can be
/// read back with [`pt_env_state`].
///
/// # Safety
/// `env` must be a live handle; `out` (optional) must be valid if non-null.
#[no_mangle]
pub unsafe extern "C" fn pt_env_step(
    env: *mut PtEnv,
    action_index: u64,
    out: *mut PtStepOutcome,
) -> PtStatus {
    let env = match borrow_env_mut(env) {
        Ok(e) => e,
        Err(s) => return s,
    };
    let result = catch_unwind(AssertUnwindSafe(|| {
        let action = match decode_action(action_index, env.knobs()) {
            Ok(a) => a,
            Err(e) => return fail(&e),
        };
        match env.step(&action) {
            Ok(outcome) => {
                if !out.is_null() {
                    *out = PtStepOutcome {
                        reward: outcome.reward,
                        throughput_norm: outcome.state.throughput_norm,
                        achieved_rate: outcome.info.achieved_rate,
                        mem_used_mb: outcome.info.mem_used_mb,
                        cpu_budget: outcome.info.cpu_budget,
                        bottleneck_stage: outcome
                            .info
                            .bottleneck_stage
                            .map(|i| i as i32)
                            .unwrap_or(-1),
                        crashed: outcome.crashed,
                        clamped: outcome.info.clamped,
                    };
                }
                PtStatus::PtOk
            }
            Err(e) => fail(&e),
        }
    }));
    result.unwrap_or_else(|_| {
        set_last_error("panic in pt_env_step");
        PtStatus::PtPanic
    })
}

fn simulate_doc(doc: SimDoc) -> Result<String, Error> {
    let alloc = match doc.allocation {
        Some(a) => a,
        None => alloc_even(&doc.pipeline, doc.machine.total_cpus)?,
    };
    let report = pipeline_throughput(&doc.pipeline, &alloc, &doc.machine, &doc.workload, None)?;
    Ok(serde_json::to_string(&report)?)
}

/// One-shot noiseless throughput report for the document's allocation (or
/// the even split when none is given). Returns a JSON string to free with
/// [`pt_string_free`], or null on error.
///
/// # Safety
/// `config_json` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pt_simulate_json(config_json: *const c_char) -> *mut c_char {
    let result = catch_unwind(AssertUnwindSafe(|| {
        let doc = match parse_doc(config_json) {
            Ok(doc) => doc,
            Err(_) => return ptr::null_mut(),
        };
        match simulate_doc(doc) {
            Ok(json) => to_c_string(json),
            Err(e) => {
                fail(&e);
                ptr::null_mut()
            }
        }
    }));
    result.unwrap_or_else(|_| {
        set_last_error("panic in pt_simulate_json");
        ptr::null_mut()
    })
}

fn oracle_doc(doc: SimDoc) -> Result<String, Error> {
    let (method, alloc, rate) =
        match alloc_oracle_bruteforce(&doc.pipeline, &doc.machine, &doc.workload, None) {
            Ok((alloc, rate)) => ("brute_force", alloc, rate),
            Err(Error::SpaceTooLarge { .. }) => {
                let alloc = alloc_greedy_true(&doc.pipeline, &doc.machine, &doc.workload)?;
                let rate =
                    pipeline_throughput(&doc.pipeline, &alloc, &doc.machine, &doc.workload, None)?
                        .achieved_rate;
                ("greedy_true", alloc, rate)
            }
            Err(e) => return Err(e),
        };
    Ok(serde_json::to_string(&serde_json::json!({
        "method": method,
        "allocation": alloc,
        "achieved_rate": rate,
    }))?)
}

/// Best allocation for the document's pipeline/machine/workload: brute force
/// within the search guard, greedy-true beyond it. Returns a JSON string to
/// free with [`pt_string_free`], or null on error.
///
/// # Safety
/// `config_json` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pt_oracle_json(config_json: *const c_char) -> *mut c_char {
    let result = catch_unwind(AssertUnwindSafe(|| {
        let doc = match parse_doc(config_json) {
            Ok(doc) => doc,
            Err(_) => return ptr::null_mut(),
        };
        match oracle_doc(doc) {
            Ok(json) => to_c_string(json),
            Err(e) => {
                fail(&e);
                ptr::null_mut()
            }
        }
    }));
    result.unwrap_or_else(|_| {
        set_last_error("panic in pt_oracle_json");
        ptr::null_mut()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc_json() -> CString {
        CString::new(
            serde_json::json!({
                "pipeline": {
                    "stages": [
                        {"name": "disk", "kind": "disk_load", "cost_per_item_cpu_s": 0.5},
                        {"name": "batch", "kind": "batch", "cost_per_item_cpu_s": 1.0},
                        {"name": "prefetch", "kind": "prefetch"}
                    ],
                    "sample_size_mb": 1.0
                },
                "machine": {
                    "total_cpus": 9, "cpu_ghz": 1.0, "total_mem_mb": 8192.0,
                    "dram_bandwidth_mbps": 25600.0, "io_bandwidth_mbps": 1e6
                },
                "workload": {"batch_size": 32, "model_latency_s": 4.0}
            })
            .to_string(),
        )
        .unwrap()
    }

    #[test]
    fn env_lifecycle_over_the_c_abi() {
        let json = doc_json();
        let mut handle: *mut PtEnv = ptr::null_mut();
        let status = unsafe { pt_env_new_from_json(json.as_ptr(), &mut handle) };
        assert_eq!(status, PtStatus::PtOk);
        assert!(!handle.is_null());

        unsafe {
            assert_eq!(pt_env_knobs(handle), 3);
            assert_eq!(pt_env_state_len(handle), 9);
            assert_eq!(pt_env_action_count(handle), 125);
            assert_eq!(pt_env_cpu_budget(handle), 9);

            let mut state = vec![0.0f64; 9];
            assert_eq!(
                pt_env_state(handle, state.as_mut_ptr(), state.len()),
                PtStatus::PtOk
            );
            assert!(state.iter().all(|v| v.is_finite()));

            let mut mask = vec![0u8; 125];
            assert_eq!(
                pt_env_feasible_mask(handle, mask.as_mut_ptr(), mask.len()),
                PtStatus::PtOk
            );
            // all-maintain is digit 2 everywhere: index 2*25 + 2*5 + 2
            assert_eq!(mask[62], 1);

            let mut outcome = std::mem::zeroed::<PtStepOutcome>();
            assert_eq!(pt_env_step(handle, 62, &mut outcome), PtStatus::PtOk);
            assert!(outcome.reward >= 0.0);
            assert!(!outcome.crashed);

            let mut cpus = vec![0u32; 2];
            let mut prefetch = 0u32;
            assert_eq!(
                pt_env_allocation(handle, cpus.as_mut_ptr(), cpus.len(), &mut prefetch),
                PtStatus::PtOk
            );
            assert_eq!(cpus, vec![3, 3]); // floor(9 / 3 knobs) each
            assert_eq!(prefetch, 1);

            assert_eq!(pt_env_step(handle, 999_999, ptr::null_mut()), PtStatus::PtBadDimension);
            let mut buf = vec![0i8; 128];
            let n = pt_last_error(buf.as_mut_ptr() as *mut c_char, buf.len());
            assert!(n > 0);

            assert_eq!(pt_env_reset(handle), PtStatus::PtOk);
            pt_env_free(handle);
        }
    }

    #[test]
    fn simulate_and_oracle_return_json() {
        let json = doc_json();
        unsafe {
            let out = pt_simulate_json(json.as_ptr());
            assert!(!out.is_null());
            let text = CStr::from_ptr(out).to_str().unwrap();
            let parsed: serde_json::Value = serde_json::from_str(text).unwrap();
            assert!(parsed.get("achieved_rate").is_some());
            pt_string_free(out);

            let out = pt_oracle_json(json.as_ptr());
            assert!(!out.is_null());
            let text = CStr::from_ptr(out).to_str().unwrap();
            let parsed: serde_json::Value = serde_json::from_str(text).unwrap();
            assert_eq!(parsed["method"], "brute_force");
            pt_string_free(out);
        }
    }

    #[test]
    fn errors_surface_with_messages() {
        unsafe {
            let mut handle: *mut PtEnv = ptr::null_mut();
            assert_eq!(
                pt_env_new_from_json(ptr::null(), &mut handle),
                PtStatus::PtNullPointer
            );
            let bad = CString::new("{ not json").unwrap();
            assert_eq!(
                pt_env_new_from_json(bad.as_ptr(), &mut handle),
                PtStatus::PtParseError
            );
            let out = pt_simulate_json(bad.as_ptr());
            assert!(out.is_null());
            let n = pt_last_error(ptr::null_mut(), 0);
            assert!(n > 0);
        }
    }
}
