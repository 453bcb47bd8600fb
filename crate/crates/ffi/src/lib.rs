//! C ABI over `scaffold-core`.
//!
//! Every fallible call returns a [`ScaffoldStatus`]. On anything but `Ok`
//! the message is kept per thread and can be read with
//! [`scaffold_last_error`]. Strings handed out by this library must be
//! released with [`scaffold_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use scaffold_core::agent::{extract_action, ActionError, AgentConfig, ConfigLabel, TerminationCause};
use scaffold_core::corrector::validate_patch;
use scaffold_core::env::{ApiDoc, EnvError, Environment};
use scaffold_core::evaluator::{wilson_interval, WilsonError};
use scaffold_core::gateway::ReplayGateway;
use scaffold_core::miniworld::{builtin_tasks, load_task_dir, MiniWorld};
use scaffold_core::runner::run_suite;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaffoldStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    UnknownTask = 4,
    NotActive = 5,
    Environment = 6,
    NoCode = 7,
    MultipleBlocks = 8,
    Io = 9,
    Gateway = 10,
    Panic = 99,
}

/// An in-process world. Create with [`scaffold_world_new`].
pub struct ScaffoldWorld {
    inner: MiniWorld,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ScaffoldStatus, String);

impl From<EnvError> for Failure {
    fn from(e: EnvError) -> Self {
        let status = match e {
            EnvError::UnknownTask(_) => ScaffoldStatus::UnknownTask,
            EnvError::NotActive => ScaffoldStatus::NotActive,
            EnvError::Io(_) => ScaffoldStatus::Io,
            _ => ScaffoldStatus::Environment,
        };
        Failure(status, e.to_string())
    }
}

impl From<WilsonError> for Failure {
    fn from(e: WilsonError) -> Self {
        Failure(ScaffoldStatus::InvalidArgument, e.to_string())
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|l| *l.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure and turns panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ScaffoldStatus {
    LAST_ERROR.with(|l| *l.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScaffoldStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            ScaffoldStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(ScaffoldStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(ScaffoldStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: callers pass either null or a valid, writable pointer.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(ScaffoldStatus::NullArgument, format!("`{name}` is null")))
}

fn world_arg<'a>(p: *mut ScaffoldWorld) -> Result<&'a mut ScaffoldWorld, Failure> {
    out_arg(p, "world")
}

fn give_string(s: String, out: *mut *mut c_char) -> Result<(), Failure> {
    let out = out_arg(out, "out")?;
    let c = CString::new(s).map_err(|_| Failure(ScaffoldStatus::InvalidArgument, "output contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string(v).map_err(|e| Failure(ScaffoldStatus::Panic, e.to_string()))
}

/// The message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn scaffold_last_error() -> *const c_char {
    LAST_ERROR.with(|l| l.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Static, never freed.
#[no_mangle]
pub extern "C" fn scaffold_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scaffold_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a world over the built-in tasks, or over the task files in
/// `tasks_dir` when it is not null.
///
/// # Safety
/// `tasks_dir` must be null or a NUL-terminated string. `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scaffold_world_new(tasks_dir: *const c_char, out: *mut *mut ScaffoldWorld) -> ScaffoldStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = if tasks_dir.is_null() {
            MiniWorld::builtin()
        } else {
            MiniWorld::new(load_task_dir(Path::new(str_arg(tasks_dir, "tasks_dir")?))?)?
        };
        *out = Box::into_raw(Box::new(ScaffoldWorld { inner }));
        Ok(())
    })
}

/// # Safety
/// `world` must be null or a handle from [`scaffold_world_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scaffold_world_free(world: *mut ScaffoldWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Starts an episode. `out_json` receives the first observation as JSON.
///
/// # Safety
/// `world` must be a live handle, `task_id` a NUL-terminated string and
/// `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn scaffold_world_reset(
    world: *mut ScaffoldWorld,
    task_id: *const c_char,
    out_json: *mut *mut c_char,
) -> ScaffoldStatus {
    guard(|| {
        let w = world_arg(world)?;
        let obs = w.inner.reset(str_arg(task_id, "task_id")?)?;
        give_string(to_json(&obs)?, out_json)
    })
}

/// Runs one code action. A failing action is still `Ok`: the observation
/// JSON carries `ok: false` and the error kind.
///
/// # Safety
/// As for [`scaffold_world_reset`].
#[no_mangle]
pub unsafe extern "C" fn scaffold_world_execute(
    world: *mut ScaffoldWorld,
    code: *const c_char,
    out_json: *mut *mut c_char,
) -> ScaffoldStatus {
    guard(|| {
        let w = world_arg(world)?;
        let obs = w.inner.execute(str_arg(code, "code")?)?;
        give_string(to_json(&obs)?, out_json)
    })
}

/// # Safety
/// `world` must be a live handle. The out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn scaffold_world_evaluate(
    world: *mut ScaffoldWorld,
    out_reward: *mut u8,
    out_passed: *mut usize,
    out_total: *mut usize,
) -> ScaffoldStatus {
    guard(|| {
        let w = world_arg(world)?;
        let (reward, passed, total) = (out_arg(out_reward, "out_reward")?, out_arg(out_passed, "out_passed")?, out_arg(out_total, "out_total")?);
        let e = w.inner.evaluate()?;
        (*reward, *passed, *total) = (e.reward, e.checks_passed, e.checks_total);
        Ok(())
    })
}

/// Wilson score interval for `k` successes in `n`, as fractions.
///
/// # Safety
/// `out_lo` and `out_hi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scaffold_wilson_interval(
    k: u64,
    n: u64,
    confidence: f64,
    out_lo: *mut f64,
    out_hi: *mut f64,
) -> ScaffoldStatus {
    guard(|| {
        let (lo, hi) = (out_arg(out_lo, "out_lo")?, out_arg(out_hi, "out_hi")?);
        (*lo, *hi) = wilson_interval(k, n, confidence)?;
        Ok(())
    })
}

/// The code of the single fenced block in an agent reply.
/// Returns `NoCode` or `MultipleBlocks` when there is not exactly one.
///
/// # Safety
/// `completion` must be a NUL-terminated string and `out_code` writable.
#[no_mangle]
pub unsafe extern "C" fn scaffold_extract_action(completion: *const c_char, out_code: *mut *mut c_char) -> ScaffoldStatus {
    guard(|| {
        let text = str_arg(completion, "completion")?;
        match extract_action(text, 0) {
            Ok(a) => give_string(a.code, out_code),
            Err(e @ ActionError::NoCode) => Err(Failure(ScaffoldStatus::NoCode, e.to_string())),
            Err(e @ ActionError::MultipleBlocks) => Err(Failure(ScaffoldStatus::MultipleBlocks, e.to_string())),
        }
    })
}

/// Checks a corrector patch against API docs given as a JSON array.
/// `out_json` receives `{"valid":true,"code":...}` or
/// `{"valid":false,"violations":[...]}`; both are `Ok`.
///
/// # Safety
/// `patch` and `docs_json` must be NUL-terminated strings, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn scaffold_validate_patch(
    patch: *const c_char,
    docs_json: *const c_char,
    out_json: *mut *mut c_char,
) -> ScaffoldStatus {
    guard(|| {
        let patch = str_arg(patch, "patch")?;
        let docs: Vec<ApiDoc> = serde_json::from_str(str_arg(docs_json, "docs_json")?)
            .map_err(|e| Failure(ScaffoldStatus::InvalidArgument, format!("docs_json: {e}")))?;
        let v = match validate_patch(patch, &docs) {
            Ok(p) => serde_json::json!({"valid": true, "code": p.code}),
            Err(violations) => serde_json::json!({"valid": false, "violations": violations}),
        };
        give_string(v.to_string(), out_json)
    })
}

/// Replays recorded model traffic over the built-in tasks and returns the
/// trajectories as JSONL. `label` is `baseline`, `correction_only` or
/// `full_scaffold`. `task_ids` is a comma list, or null for every task.
/// When an episode hits a model error (usually a missing fixture) the
/// trajectories are still written and the status is `Gateway`.
///
/// # Safety
/// String arguments must be NUL-terminated (`task_ids` may be null) and
/// `out_jsonl` writable.
#[no_mangle]
pub unsafe extern "C" fn scaffold_run_replay(
    fixtures_dir: *const c_char,
    label: *const c_char,
    task_ids: *const c_char,
    out_jsonl: *mut *mut c_char,
) -> ScaffoldStatus {
    guard(|| {
        let fixtures = str_arg(fixtures_dir, "fixtures_dir")?;
        let label = str_arg(label, "label")?;
        let label: ConfigLabel = serde_json::from_value(serde_json::Value::String(label.into()))
            .map_err(|_| Failure(ScaffoldStatus::InvalidArgument, format!("unknown config label `{label}`")))?;
        let world = MiniWorld::builtin();
        let tasks = if task_ids.is_null() {
            builtin_tasks().iter().map(|t| t.task_spec()).collect::<Vec<_>>()
        } else {
            str_arg(task_ids, "task_ids")?
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|id| world.task(id).map(|t| t.task_spec()).ok_or_else(|| EnvError::UnknownTask(id.into())))
                .collect::<Result<Vec<_>, _>>()?
        };
        if !Path::new(fixtures).is_dir() {
            return Err(Failure(ScaffoldStatus::Io, format!("no fixture directory at {fixtures}")));
        }
        let gateway = ReplayGateway::open(fixtures).map_err(|e| Failure(ScaffoldStatus::Io, e.to_string()))?;
        let records = run_suite(&tasks, &AgentConfig::new(label), &gateway, || Ok(Box::new(MiniWorld::builtin()) as Box<dyn Environment>), 1);
        let mut out = String::new();
        for r in &records {
            out.push_str(&to_json(r)?);
            out.push('\n');
        }
        give_string(out, out_jsonl)?;
        match records.iter().find(|r| r.termination_cause == TerminationCause::GatewayError) {
            Some(r) => Err(Failure(ScaffoldStatus::Gateway, format!("{}: {}", r.task_id, r.error.as_deref().unwrap_or("model error")))),
            None => Ok(()),
        }
    })
}
