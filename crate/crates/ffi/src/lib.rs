//! C interface to the hearsay simulator and trace checker.
//!
//! Every function returns a [`HearsayStatus`]. On anything other than `OK`,
//! `CHECK_FAILED` or `CHECK_UNKNOWN`, [`hearsay_last_error_message`] describes
//! what went wrong on the calling thread. Strings handed out by this library
//! must be released with [`hearsay_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hearsay::checker::{check_all, Report};
use hearsay::netsim::{run, SimConfig, SimOutcome};
use hearsay::scenario::Scenario;
use hearsay::trace::{read_jsonl, to_jsonl};
use hearsay::types::{AgentId, Transaction};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HearsayStatus {
    Ok = 0,
    /// At least one check failed.
    CheckFailed = 1,
    /// The scenario or configuration was rejected.
    InvalidConfig = 2,
    /// No check failed, but some could not be decided, or the run hit its
    /// step limit before quiescence.
    CheckUnknown = 3,
    NullPointer = 4,
    InvalidUtf8 = 5,
    /// Malformed JSON or trace input.
    Parse = 6,
    /// The simulation has not been run yet.
    NotRun = 7,
    /// An index was out of range.
    OutOfRange = 8,
    Panic = 9,
}

/// Opaque simulation handle.
pub struct HearsaySim {
    config: SimConfig,
    outcome: Option<SimOutcome>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl ToString) {
    let c = CString::new(msg.to_string().replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: HearsayStatus, msg: impl ToString) -> HearsayStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> HearsayStatus) -> HearsayStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(HearsayStatus::Panic, msg)
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, HearsayStatus> {
    if s.is_null() {
        return Err(fail(HearsayStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| fail(HearsayStatus::InvalidUtf8, e))
}

unsafe fn hand_out(out: *mut *mut c_char, s: String) -> HearsayStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            HearsayStatus::Ok
        }
        Err(e) => fail(HearsayStatus::Panic, e),
    }
}

fn report_status(r: &Report) -> HearsayStatus {
    match r.exit_code() {
        0 => HearsayStatus::Ok,
        1 => HearsayStatus::CheckFailed,
        _ => HearsayStatus::CheckUnknown,
    }
}

/// Builds a simulation from a scenario JSON document. `seed` overrides the
/// scenario's first seed when `use_seed` is true.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hearsay_sim_new_from_json(
    json: *const c_char,
    use_seed: bool,
    seed: u64,
    out: *mut *mut HearsaySim,
) -> HearsayStatus {
    guard(|| {
        if out.is_null() {
            return fail(HearsayStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let scenario = match Scenario::parse(text) {
            Ok(s) => s,
            Err(hearsay::scenario::ScenarioError::Parse(e)) => return fail(HearsayStatus::Parse, e),
            Err(e) => return fail(HearsayStatus::InvalidConfig, e),
        };
        let seed = if use_seed {
            seed
        } else {
            match scenario.seed_list() {
                Ok(s) => s[0],
                Err(e) => return fail(HearsayStatus::InvalidConfig, e),
            }
        };
        match scenario.config(seed) {
            Ok(config) => {
                *out = Box::into_raw(Box::new(HearsaySim { config, outcome: None }));
                HearsayStatus::Ok
            }
            Err(e) => fail(HearsayStatus::InvalidConfig, e),
        }
    })
}

/// Runs the simulation to quiescence or the step limit. Returns
/// `CHECK_UNKNOWN` when the limit was hit.
///
/// # Safety
/// `sim` must come from [`hearsay_sim_new_from_json`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn hearsay_sim_run(sim: *mut HearsaySim) -> HearsayStatus {
    guard(|| {
        let Some(sim) = sim.as_mut() else {
            return fail(HearsayStatus::NullPointer, "sim is null");
        };
        match run(&sim.config) {
            Ok(o) => {
                let quiescent = o.quiescent;
                sim.outcome = Some(o);
                if quiescent {
                    HearsayStatus::Ok
                } else {
                    fail(HearsayStatus::CheckUnknown, "step limit reached before quiescence")
                }
            }
            Err(e) => fail(HearsayStatus::InvalidConfig, e),
        }
    })
}

unsafe fn outcome<'a>(sim: *const HearsaySim) -> Result<&'a SimOutcome, HearsayStatus> {
    let Some(sim) = sim.as_ref() else {
        return Err(fail(HearsayStatus::NullPointer, "sim is null"));
    };
    sim.outcome
        .as_ref()
        .ok_or_else(|| fail(HearsayStatus::NotRun, "call hearsay_sim_run first"))
}

/// The trace of the last run as JSON lines.
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hearsay_sim_trace_jsonl(sim: *const HearsaySim, out: *mut *mut c_char) -> HearsayStatus {
    guard(|| {
        if out.is_null() {
            return fail(HearsayStatus::NullPointer, "out is null");
        }
        match outcome(sim) {
            Ok(o) => hand_out(out, to_jsonl(&o.trace)),
            Err(s) => s,
        }
    })
}

/// Checks the last run. `out_report` receives the report as JSON.
///
/// # Safety
/// `sim` must be a live handle and `out_report` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hearsay_sim_check(sim: *const HearsaySim, out_report: *mut *mut c_char) -> HearsayStatus {
    guard(|| {
        if out_report.is_null() {
            return fail(HearsayStatus::NullPointer, "out_report is null");
        }
        let o = match outcome(sim) {
            Ok(o) => o,
            Err(s) => return s,
        };
        let report = match check_all(&o.trace) {
            Ok(r) => r,
            Err(e) => return fail(HearsayStatus::Parse, e),
        };
        match hand_out(out_report, serde_json::to_string(&report).expect("report serializes")) {
            HearsayStatus::Ok => report_status(&report),
            s => s,
        }
    })
}

/// Balance of `agent` as seen by `viewer` after the last run.
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hearsay_sim_balance(
    sim: *const HearsaySim,
    viewer: u32,
    agent: u32,
    out: *mut u64,
) -> HearsayStatus {
    guard(|| {
        if out.is_null() {
            return fail(HearsayStatus::NullPointer, "out is null");
        }
        let o = match outcome(sim) {
            Ok(o) => o,
            Err(s) => return s,
        };
        let n = o.stacks.len();
        if viewer as usize >= n || agent as usize >= n {
            return fail(HearsayStatus::OutOfRange, format!("agent ids must be below {n}"));
        }
        *out = o.stacks[viewer as usize].ledger.balance(AgentId(agent));
        HearsayStatus::Ok
    })
}

/// Checks a JSON-lines trace offline.
///
/// # Safety
/// `jsonl` must be a NUL-terminated string and `out_report` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hearsay_check_trace(jsonl: *const c_char, out_report: *mut *mut c_char) -> HearsayStatus {
    guard(|| {
        if out_report.is_null() {
            return fail(HearsayStatus::NullPointer, "out_report is null");
        }
        let text = match read_str(jsonl) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let records = match read_jsonl(text.as_bytes()) {
            Ok(r) => r,
            Err(e) => return fail(HearsayStatus::Parse, e),
        };
        let report = match check_all(&records) {
            Ok(r) => r,
            Err(e) => return fail(HearsayStatus::Parse, e),
        };
        match hand_out(out_report, serde_json::to_string(&report).expect("report serializes")) {
            HearsayStatus::Ok => report_status(&report),
            s => s,
        }
    })
}

/// Hex SHA-256 digest of a transaction's canonical encoding.
///
/// # Safety
/// `tx_json` must be a NUL-terminated string and `out_hex` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hearsay_tx_digest(tx_json: *const c_char, out_hex: *mut *mut c_char) -> HearsayStatus {
    guard(|| {
        if out_hex.is_null() {
            return fail(HearsayStatus::NullPointer, "out_hex is null");
        }
        let text = match read_str(tx_json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match serde_json::from_str::<Transaction>(text) {
            Ok(tx) => hand_out(out_hex, tx.digest().to_hex()),
            Err(e) => fail(HearsayStatus::Parse, e),
        }
    })
}

/// Message for the last error on this thread, or null. Valid until the next
/// call into this library from the same thread.
#[no_mangle]
pub extern "C" fn hearsay_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn hearsay_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `sim` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn hearsay_sim_free(sim: *mut HearsaySim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}
