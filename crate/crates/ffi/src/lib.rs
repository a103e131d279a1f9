//! C ABI over the scenario library: load a scenario, compute its analytic
//! latency budget, run the closed loop, and collect results as JSON.
//!
//! Conventions shared by every entry point:
//!
//! - Every fallible function returns a [`TtStatus`]; out parameters are
//!   written only when it returns `TT_STATUS_OK`.
//! - Strings handed out through `char **` are NUL-terminated UTF-8 owned by
//!   the caller; release them with [`tt_string_free`].
//! - A non-OK return leaves a human-readable message in thread-local
//!   storage, readable via [`tt_last_error_message`] until the next call on
//!   the same thread.
//! - Panics never unwind across the boundary; they are caught and reported
//!   as `TT_STATUS_PANIC`.
//!
//! The committed `include/ttedge.h` is regenerated from this file by the
//! build script whenever the surface changes.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ttedge::scenario::{e2e_bound, run_scenario, LoadedScenario, ScenarioConfig, ScenarioError};
use ttedge::simkern::WorkerPool;
use ttedge::worldmodel::OccupancyGrid;

/// Result code of every fallible API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TtStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    Utf8 = 2,
    /// The scenario or map file could not be read or written.
    Io = 3,
    /// The scenario JSON or map text failed to parse.
    Parse = 4,
    /// The input parsed but violates a validity rule (bad schedule, bad
    /// placement demand, zero workers, ...).
    Invalid = 5,
    /// The simulation itself failed after a valid start.
    Run = 6,
    /// A panic was caught at the ABI boundary; state may be incomplete but
    /// no memory was leaked to the caller.
    Panic = 7,
}

/// A loaded, validated scenario (config plus occupancy grid). Opaque:
/// create with `tt_scenario_load`/`tt_scenario_load_str`, release with
/// `tt_scenario_free`.
pub struct TtScenario {
    inner: LoadedScenario,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: TtStatus, message: impl Into<String>) -> TtStatus {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(message).expect("NULs stripped above"));
    });
    status
}

fn ok() -> TtStatus {
    LAST_ERROR.with(|slot| slot.borrow_mut().take());
    TtStatus::Ok
}

fn status_for(error: &ScenarioError) -> TtStatus {
    match error {
        ScenarioError::Io { .. } => TtStatus::Io,
        ScenarioError::Parse { .. } => TtStatus::Parse,
        _ => TtStatus::Invalid,
    }
}

/// Run `body` with a panic fence so unwinding never crosses into C.
fn guarded(body: impl FnOnce() -> TtStatus) -> TtStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "non-string panic payload".to_string());
            fail(TtStatus::Panic, format!("internal panic: {detail}"))
        }
    }
}

/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, TtStatus> {
    if ptr.is_null() {
        return Err(fail(TtStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(TtStatus::Utf8, format!("{name} is not valid UTF-8")))
}

fn give_string(out: *mut *mut c_char, text: String) {
    let c = CString::new(text.replace('\0', " ")).expect("NULs stripped above");
    unsafe { *out = c.into_raw() };
}

/// Load and validate a scenario file; `map_file` inside it resolves
/// relative to the file's own directory. On success `*out_scenario` owns
/// the handle — release it with `tt_scenario_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_scenario` a valid
/// pointer to write one pointer through.
#[no_mangle]
pub unsafe extern "C" fn tt_scenario_load(
    path: *const c_char,
    out_scenario: *mut *mut TtScenario,
) -> TtStatus {
    guarded(|| {
        if out_scenario.is_null() {
            return fail(TtStatus::NullArgument, "out_scenario is null");
        }
        let path = match str_arg(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match LoadedScenario::load(Path::new(path)) {
            Ok(inner) => {
                *out_scenario = Box::into_raw(Box::new(TtScenario { inner }));
                ok()
            }
            Err(e) => fail(status_for(&e), e.to_string()),
        }
    })
}

/// Build a scenario from in-memory text: the scenario JSON plus the map
/// text it would otherwise read from `map_file` (which is ignored here).
///
/// # Safety
/// `config_json` and `map_text` must be NUL-terminated strings and
/// `out_scenario` a valid pointer to write one pointer through.
#[no_mangle]
pub unsafe extern "C" fn tt_scenario_load_str(
    config_json: *const c_char,
    map_text: *const c_char,
    out_scenario: *mut *mut TtScenario,
) -> TtStatus {
    guarded(|| {
        if out_scenario.is_null() {
            return fail(TtStatus::NullArgument, "out_scenario is null");
        }
        let json = match str_arg(config_json, "config_json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let map = match str_arg(map_text, "map_text") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let built = ScenarioConfig::from_json(json).and_then(|config| {
            let grid = OccupancyGrid::from_map_str(map)?;
            LoadedScenario::from_parts(config, grid)
        });
        match built {
            Ok(inner) => {
                *out_scenario = Box::into_raw(Box::new(TtScenario { inner }));
                ok()
            }
            Err(e) => fail(status_for(&e), e.to_string()),
        }
    })
}

/// Release a scenario handle. Null is a no-op.
///
/// # Safety
/// `scenario` must be null or a pointer obtained from a `tt_scenario_load*`
/// call that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn tt_scenario_free(scenario: *mut TtScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Read the seed the scenario file configured (the seed `tt_run_*` callers
/// pass to reproduce the shipped runs).
///
/// # Safety
/// `scenario` must be a live handle and `out_seed` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tt_scenario_seed(
    scenario: *const TtScenario,
    out_seed: *mut u64,
) -> TtStatus {
    guarded(|| {
        if scenario.is_null() || out_seed.is_null() {
            return fail(
                TtStatus::NullArgument,
                "scenario and out_seed must be non-null",
            );
        }
        *out_seed = (*scenario).inner.config.seed;
        ok()
    })
}

/// Compute the analytic end-to-end latency budget and return it as a JSON
/// object (fields in microseconds, `total_us` included).
///
/// # Safety
/// `scenario` must be a live handle and `out_json` a valid pointer; the
/// returned string must be released with `tt_string_free`.
#[no_mangle]
pub unsafe extern "C" fn tt_e2e_bound_json(
    scenario: *const TtScenario,
    out_json: *mut *mut c_char,
) -> TtStatus {
    guarded(|| {
        if scenario.is_null() || out_json.is_null() {
            return fail(
                TtStatus::NullArgument,
                "scenario and out_json must be non-null",
            );
        }
        match e2e_bound(&(*scenario).inner) {
            Ok(budget) => {
                let json = serde_json::to_string_pretty(&budget).expect("budget serializes");
                give_string(out_json, json);
                ok()
            }
            Err(e) => fail(status_for(&e), e.to_string()),
        }
    })
}

fn run(
    scenario: &LoadedScenario,
    seed: u64,
    workers: u32,
) -> Result<ttedge::scenario::RunOutput, TtStatus> {
    if workers == 0 {
        return Err(fail(TtStatus::Invalid, "workers must be at least 1"));
    }
    let pool = WorkerPool::new(workers as usize);
    run_scenario(scenario, seed, &pool).map_err(|e| fail(TtStatus::Run, e.to_string()))
}

/// Run the closed loop and return the run summary as JSON.
///
/// # Safety
/// `scenario` must be a live handle and `out_summary_json` a valid pointer;
/// the returned string must be released with `tt_string_free`.
#[no_mangle]
pub unsafe extern "C" fn tt_run_json(
    scenario: *const TtScenario,
    seed: u64,
    workers: u32,
    out_summary_json: *mut *mut c_char,
) -> TtStatus {
    guarded(|| {
        if scenario.is_null() || out_summary_json.is_null() {
            return fail(
                TtStatus::NullArgument,
                "scenario and out_summary_json must be non-null",
            );
        }
        match run(&(*scenario).inner, seed, workers) {
            Ok(output) => {
                let json =
                    serde_json::to_string_pretty(&output.summary).expect("summary serializes");
                give_string(out_summary_json, json);
                ok()
            }
            Err(status) => status,
        }
    })
}

/// Run the closed loop and write the full trace set (`network.csv`,
/// `robot.csv`, `orchestration.csv`, `latency.csv`, `summary.json`) under
/// `out_dir`, creating it if missing. `out_summary_json` may be null when
/// only the files are wanted.
///
/// # Safety
/// `scenario` must be a live handle, `out_dir` a NUL-terminated string, and
/// `out_summary_json` null or a valid pointer; a returned string must be
/// released with `tt_string_free`.
#[no_mangle]
pub unsafe extern "C" fn tt_run_to_dir(
    scenario: *const TtScenario,
    seed: u64,
    workers: u32,
    out_dir: *const c_char,
    out_summary_json: *mut *mut c_char,
) -> TtStatus {
    guarded(|| {
        if scenario.is_null() {
            return fail(TtStatus::NullArgument, "scenario is null");
        }
        let dir = match str_arg(out_dir, "out_dir") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let output = match run(&(*scenario).inner, seed, workers) {
            Ok(output) => output,
            Err(status) => return status,
        };
        if let Err(e) = output.traces.write_to_dir(Path::new(dir), &output.summary) {
            return fail(TtStatus::Io, format!("writing traces under {dir}: {e}"));
        }
        if !out_summary_json.is_null() {
            let json = serde_json::to_string_pretty(&output.summary).expect("summary serializes");
            give_string(out_summary_json, json);
        }
        ok()
    })
}

/// Release a string returned by this library. Null is a no-op.
///
/// # Safety
/// `text` must be null or a pointer obtained from this library that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn tt_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}

/// Message describing this thread's most recent failing call, or null if
/// the most recent call succeeded. The pointer stays valid until the next
/// API call on the same thread — copy it out before calling anything else.
#[no_mangle]
pub extern "C" fn tt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null(), |message| message.as_ptr())
    })
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn tt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
