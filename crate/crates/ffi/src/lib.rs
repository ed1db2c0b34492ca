//! C ABI over `ttd_core`. Handles are opaque pointers created by
//! `ttd_*_open`/`ttd_record*` and released by the matching `*_free`.
//! Every function returns a [`TtdStatus`]; details of the last failure on
//! the calling thread are available from [`ttd_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use ttd_core::demos;
use ttd_core::guest::{LogicalTime, Program, ScriptSource};
use ttd_core::host::Scenario;
use ttd_core::record::{read_trace, record, write_trace, RecordOptions, Trace, TraceFileError};
use ttd_core::replay::{verify, ReplayError};
use ttd_core::ttd::{DebugError, DebugSession, Page, Pause, Stop};

/// Status codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TtdStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    TraceCorrupt = 4,
    ProgramError = 5,
    ScenarioError = 6,
    Divergence = 7,
    NoPredecessor = 8,
    NoCaller = 9,
    EndOfTrace = 10,
    TargetNeverFires = 11,
    UnknownLocation = 12,
    OutOfRange = 13,
    InvalidHeapPath = 14,
    ReplayFailed = 15,
    EngineFault = 16,
    Panic = 17,
    InvalidArgument = 18,
}

/// A recorded trace.
pub struct TtdTrace {
    trace: Arc<Trace>,
}

/// A debug session over a trace.
pub struct TtdSession {
    session: DebugSession,
}

/// (call count, loop iterations) of a frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TtdTime {
    pub call_count: u64,
    pub back_jumps: u64,
}

/// Where a session is paused.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TtdPause {
    pub event: u64,
    pub stmt: u32,
    pub script: u32,
    pub line: u32,
    pub col: u32,
    pub time: TtdTime,
    pub depth: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

type FfiResult = Result<(), (TtdStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult) -> TtdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TtdStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TtdStatus::Panic
        }
    }
}

fn null() -> (TtdStatus, String) {
    (TtdStatus::NullArgument, "null argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, (TtdStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p).to_str().map_err(|e| (TtdStatus::InvalidUtf8, e.to_string()))
}

fn debug_err(e: DebugError) -> (TtdStatus, String) {
    let status = match &e {
        DebugError::NoPredecessor => TtdStatus::NoPredecessor,
        DebugError::NoCaller => TtdStatus::NoCaller,
        DebugError::EndOfTrace => TtdStatus::EndOfTrace,
        DebugError::TargetNeverFires { .. } => TtdStatus::TargetNeverFires,
        DebugError::UnknownLocation(_) => TtdStatus::UnknownLocation,
        DebugError::OutOfRange(_) => TtdStatus::OutOfRange,
        DebugError::InvalidHeapPath(_) => TtdStatus::InvalidHeapPath,
        DebugError::Divergence(_) => TtdStatus::Divergence,
        DebugError::Replay(_) => TtdStatus::ReplayFailed,
        DebugError::EngineFault(_) => TtdStatus::EngineFault,
    };
    (status, e.to_string())
}

fn trace_err(e: TraceFileError) -> (TtdStatus, String) {
    match e {
        TraceFileError::Io(_) => (TtdStatus::Io, e.to_string()),
        _ => (TtdStatus::TraceCorrupt, e.to_string()),
    }
}

fn pause_out(s: &DebugSession, p: &Pause, out: *mut TtdPause) {
    if out.is_null() {
        return;
    }
    let loc = s.location(p.stmt);
    let v = TtdPause {
        event: p.event,
        stmt: p.stmt,
        script: loc.script_id,
        line: loc.line,
        col: loc.col,
        time: TtdTime { call_count: p.time.call_count, back_jumps: p.time.back_jumps },
        depth: p.depth as u64,
    };
    unsafe { out.write(v) };
}

unsafe fn put<T>(out: *mut *mut T, v: T) {
    out.write(Box::into_raw(Box::new(v)));
}

/// Human-readable name of a status code. The string is static.
#[no_mangle]
pub extern "C" fn ttd_status_name(status: TtdStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        TtdStatus::Ok => b"ok\0",
        TtdStatus::NullArgument => b"null-argument\0",
        TtdStatus::InvalidUtf8 => b"invalid-utf8\0",
        TtdStatus::Io => b"io\0",
        TtdStatus::TraceCorrupt => b"trace-corrupt\0",
        TtdStatus::ProgramError => b"program-error\0",
        TtdStatus::ScenarioError => b"scenario-error\0",
        TtdStatus::Divergence => b"divergence\0",
        TtdStatus::NoPredecessor => b"no-predecessor\0",
        TtdStatus::NoCaller => b"no-caller\0",
        TtdStatus::EndOfTrace => b"end-of-trace\0",
        TtdStatus::TargetNeverFires => b"target-never-fires\0",
        TtdStatus::UnknownLocation => b"unknown-location\0",
        TtdStatus::OutOfRange => b"out-of-range\0",
        TtdStatus::InvalidHeapPath => b"invalid-heap-path\0",
        TtdStatus::ReplayFailed => b"replay-failed\0",
        TtdStatus::EngineFault => b"engine-fault\0",
        TtdStatus::Panic => b"panic\0",
        TtdStatus::InvalidArgument => b"invalid-argument\0",
    };
    s.as_ptr() as *const c_char
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on this thread.
#[no_mangle]
pub extern "C" fn ttd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Records `source` (named `script_name`) against a scenario given as JSON.
/// A `checkpoint_interval_ms` of 0 records only the initial checkpoint.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ttd_record(
    script_name: *const c_char,
    source: *const c_char,
    scenario_json: *const c_char,
    checkpoint_interval_ms: u64,
    out: *mut *mut TtdTrace,
) -> TtdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let name = str_arg(script_name)?;
        let text = str_arg(source)?;
        let scen = str_arg(scenario_json)?;
        let program = Program::from_sources(vec![ScriptSource { name: name.into(), text: text.into() }])
            .map_err(|e| (TtdStatus::ProgramError, e.to_string()))?;
        let scenario = Scenario::from_json(scen).map_err(|e| (TtdStatus::ScenarioError, e.to_string()))?;
        let opts = RecordOptions {
            checkpoint_interval: (checkpoint_interval_ms > 0).then_some(checkpoint_interval_ms),
            ..RecordOptions::default()
        };
        put(out, TtdTrace { trace: Arc::new(record(Arc::new(program), &scenario, &opts)) });
        Ok(())
    })
}

/// Records a bundled demo with default options.
///
/// # Safety
/// `name` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttd_record_demo(name: *const c_char, out: *mut *mut TtdTrace) -> TtdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let name = str_arg(name)?;
        let d = demos::demo(name).ok_or((TtdStatus::InvalidArgument, format!("no demo named {name}")))?;
        let program = d.program().map_err(|e| (TtdStatus::ProgramError, e.to_string()))?;
        let scenario = d.scenario().map_err(|e| (TtdStatus::ScenarioError, e.to_string()))?;
        put(out, TtdTrace { trace: Arc::new(record(Arc::new(program), &scenario, &RecordOptions::default())) });
        Ok(())
    })
}

/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttd_trace_read(path: *const c_char, out: *mut *mut TtdTrace) -> TtdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let trace = read_trace(Path::new(str_arg(path)?)).map_err(trace_err)?;
        put(out, TtdTrace { trace: Arc::new(trace) });
        Ok(())
    })
}

/// # Safety
/// `trace` must come from this library; `path` must be a valid string.
#[no_mangle]
pub unsafe extern "C" fn ttd_trace_write(trace: *const TtdTrace, path: *const c_char, compress: bool) -> TtdStatus {
    guard(|| {
        let t = trace.as_ref().ok_or_else(null)?;
        write_trace(Path::new(str_arg(path)?), &t.trace, compress).map_err(trace_err)?;
        Ok(())
    })
}

/// # Safety
/// `trace` must come from this library and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttd_trace_event_count(trace: *const TtdTrace, out: *mut u64) -> TtdStatus {
    guard(|| {
        let t = trace.as_ref().ok_or_else(null)?;
        out.as_mut().ok_or_else(null).map(|o| *o = t.trace.end.events)
    })
}

/// # Safety
/// `trace` must come from this library and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttd_trace_checkpoint_count(trace: *const TtdTrace, out: *mut u64) -> TtdStatus {
    guard(|| {
        let t = trace.as_ref().ok_or_else(null)?;
        out.as_mut().ok_or_else(null).map(|o| *o = t.trace.checkpoints.len() as u64)
    })
}

/// Replays the trace with full checks. `Divergence` when it does not match.
///
/// # Safety
/// `trace` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn ttd_trace_verify(trace: *const TtdTrace, all_checkpoints: bool) -> TtdStatus {
    guard(|| {
        let t = trace.as_ref().ok_or_else(null)?;
        verify(&t.trace, all_checkpoints).map(|_| ()).map_err(|e| match e {
            ReplayError::Divergence(_) => (TtdStatus::Divergence, e.to_string()),
            _ => (TtdStatus::ReplayFailed, e.to_string()),
        })
    })
}

/// # Safety
/// `trace` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn ttd_trace_free(trace: *mut TtdTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Opens a session paused at the first statement. The session keeps its own
/// reference to the trace, so the trace handle may be freed afterwards.
///
/// # Safety
/// `trace` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttd_session_open(trace: *const TtdTrace, out: *mut *mut TtdSession) -> TtdStatus {
    guard(|| {
        let t = trace.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        let session = DebugSession::open(t.trace.clone()).map_err(debug_err)?;
        put(out, TtdSession { session });
        Ok(())
    })
}

/// # Safety
/// `session` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ttd_session_free(session: *mut TtdSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

unsafe fn with_session(
    session: *mut TtdSession,
    out: *mut TtdPause,
    f: impl FnOnce(&mut DebugSession) -> Result<Pause, DebugError>,
) -> TtdStatus {
    guard(|| {
        let s = &mut session.as_mut().ok_or_else(null)?.session;
        let p = f(s).map_err(debug_err)?;
        pause_out(s, &p, out);
        Ok(())
    })
}

/// Current pause; `EndOfTrace` once execution ran past the last statement.
///
/// # Safety
/// `session` must come from this library; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn ttd_session_pause(session: *mut TtdSession, out: *mut TtdPause) -> TtdStatus {
    with_session(session, out, |s| s.pause().ok_or(DebugError::EndOfTrace))
}

/// # Safety
/// `session` must come from this library; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn ttd_session_step_forward(session: *mut TtdSession, out: *mut TtdPause) -> TtdStatus {
    with_session(session, out, |s| s.step_forward())
}

/// # Safety
/// `session` must come from this library; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn ttd_session_step_over(session: *mut TtdSession, out: *mut TtdPause) -> TtdStatus {
    with_session(session, out, |s| s.step_over())
}

/// # Safety
/// `session` must come from this library; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn ttd_session_step_out(session: *mut TtdSession, out: *mut TtdPause) -> TtdStatus {
    with_session(session, out, |s| s.step_out())
}

/// # Safety
/// `session` must come from this library; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn ttd_session_step_back(session: *mut TtdSession, out: *mut TtdPause) -> TtdStatus {
    with_session(session, out, |s| s.step_back())
}

/// # Safety
/// `session` must come from this library; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn ttd_session_reverse_step_over(session: *mut TtdSession, out: *mut TtdPause) -> TtdStatus {
    with_session(session, out, |s| s.reverse_step_over())
}

/// # Safety
/// `session` must come from this library; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn ttd_session_reverse_step_out(session: *mut TtdSession, out: *mut TtdPause) -> TtdStatus {
    with_session(session, out, |s| s.reverse_step_out())
}

/// Runs to the next breakpoint; `EndOfTrace` when none fires.
///
/// # Safety
/// `session` must come from this library; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn ttd_session_continue(session: *mut TtdSession, out: *mut TtdPause) -> TtdStatus {
    with_session(session, out, |s| match s.continue_forward()? {
        Stop::Paused(p) => Ok(p),
        Stop::Ended => Err(DebugError::EndOfTrace),
    })
}

/// Travels to statement `stmt` at logical time `time` within `event`.
///
/// # Safety
/// `session` must come from this library; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn ttd_session_travel_to(
    session: *mut TtdSession,
    event: u64,
    stmt: u32,
    time: TtdTime,
    out: *mut TtdPause,
) -> TtdStatus {
    with_session(session, out, |s| s.travel_to(event, stmt, LogicalTime::new(time.call_count, time.back_jumps)))
}

/// Travels to the first statement run at or after `event`.
///
/// # Safety
/// `session` must come from this library; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn ttd_session_travel_to_event(
    session: *mut TtdSession,
    event: u64,
    out: *mut TtdPause,
) -> TtdStatus {
    with_session(session, out, |s| s.travel_to_event(event))
}

/// Sets a breakpoint on the first statement at `script:line`. `condition`
/// may be null for an unconditional breakpoint.
///
/// # Safety
/// `session` must come from this library; `script` must be a valid string;
/// `id_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn ttd_session_set_breakpoint(
    session: *mut TtdSession,
    script: *const c_char,
    line: u32,
    condition: *const TtdTime,
    id_out: *mut u32,
) -> TtdStatus {
    guard(|| {
        let s = &mut session.as_mut().ok_or_else(null)?.session;
        let script = str_arg(script)?;
        let cond = condition.as_ref().map(|t| LogicalTime::new(t.call_count, t.back_jumps));
        let bp = s.set_breakpoint_at_line(script, line, cond).map_err(debug_err)?;
        if let Some(o) = id_out.as_mut() {
            *o = bp.id;
        }
        Ok(())
    })
}

/// # Safety
/// `session` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn ttd_session_clear_breakpoint(session: *mut TtdSession, id: u32) -> TtdStatus {
    guard(|| {
        let s = &mut session.as_mut().ok_or_else(null)?.session;
        if s.clear_breakpoint(id) {
            Ok(())
        } else {
            Err((TtdStatus::InvalidArgument, format!("no breakpoint {id}")))
        }
    })
}

/// JSON view of the paused state. `what` is one of `locals`, `stack`,
/// `heap`, `dom`, `timers`, `requests`, `storage`, `animations`; `arg` is
/// the frame index for `locals` and the path for `heap` (null otherwise).
/// Free the returned string with [`ttd_string_free`].
///
/// # Safety
/// `session` must come from this library; string arguments must be valid;
/// `json_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttd_session_inspect(
    session: *mut TtdSession,
    what: *const c_char,
    arg: *const c_char,
    json_out: *mut *mut c_char,
) -> TtdStatus {
    guard(|| {
        let s = &session.as_ref().ok_or_else(null)?.session;
        if json_out.is_null() {
            return Err(null());
        }
        let what = str_arg(what)?;
        let arg = if arg.is_null() { None } else { Some(str_arg(arg)?) };
        let page = Page::default();
        let v = match what {
            "locals" => {
                let frame = match arg {
                    None => 0,
                    Some(a) => a.parse().map_err(|_| (TtdStatus::InvalidArgument, format!("bad frame index {a}")))?,
                };
                s.inspect_locals(frame, page).map_err(debug_err)?
            }
            "stack" => s.inspect_stack(),
            "heap" => s.inspect_heap(arg.ok_or_else(null)?, page).map_err(debug_err)?,
            "dom" => s.inspect_dom(page),
            "timers" => s.inspect_timers(),
            "requests" => s.inspect_requests(),
            "storage" => s.inspect_storage(),
            "animations" => s.inspect_animations(),
            other => return Err((TtdStatus::InvalidArgument, format!("unknown view {other}"))),
        };
        let text = CString::new(v.to_string()).expect("json has no nul bytes");
        json_out.write(text.into_raw());
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn ttd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
