//! Newline-delimited JSON protocol exposing [`DebugSession`] to frontends.
//! Requests are `{id, method, params}`, responses `{id, ok, result}` or
//! `{id, ok: false, error: {code, message}}`, notifications `{method, params}`.

mod server;

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use serde_json::{json, Value as Json};

use crate::demos;
use crate::guest::{LogicalTime, StmtId};
use crate::record::{read_trace, record, RecordOptions, Trace};
use crate::ttd::{DebugError, DebugSession, Notice, Page, Pause, Stop};

pub use server::{serve, ServerHandle};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_PORT: u16 = 9229;

/// Longest accepted request line; longer input closes the connection.
pub const MAX_LINE: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ProtoError {
    pub code: String,
    pub message: String,
}

impl ProtoError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        ProtoError { code: code.to_string(), message: message.into() }
    }

    fn params(e: serde_json::Error) -> Self {
        ProtoError::new("invalid-params", e.to_string())
    }

    pub fn to_json(&self) -> Json {
        let mut e = json!({ "code": self.code, "message": self.message });
        let rpc = match self.code.as_str() {
            "parse-error" => Some(-32700),
            "invalid-request" => Some(-32600),
            "unknown-method" => Some(-32601),
            "invalid-params" => Some(-32602),
            _ => None,
        };
        if let Some(n) = rpc {
            e["rpcCode"] = json!(n);
        }
        e
    }
}

impl From<DebugError> for ProtoError {
    fn from(e: DebugError) -> Self {
        let mut p = ProtoError::new(e.code(), e.to_string());
        if let DebugError::Divergence(r) = &e {
            p.message = r.to_string();
        }
        p
    }
}

pub fn response_ok(id: &Json, result: Json) -> Json {
    json!({ "id": id, "ok": true, "result": result })
}

pub fn response_err(id: &Json, e: &ProtoError) -> Json {
    json!({ "id": id, "ok": false, "error": e.to_json() })
}

pub fn notification(method: &str, params: Json) -> Json {
    json!({ "method": method, "params": params })
}

pub fn hello() -> Json {
    notification(
        "hello",
        json!({ "protocol": PROTOCOL_VERSION, "server": "ttd", "version": env!("CARGO_PKG_VERSION") }),
    )
}

/// A parsed request line.
#[derive(Debug, Clone)]
pub struct Request {
    pub id: Json,
    pub method: String,
    pub params: Json,
}

/// Parses one line. On failure returns the error and whatever id could be
/// recovered (null otherwise).
pub fn parse_request(line: &[u8]) -> Result<Request, (Json, ProtoError)> {
    let v: Json =
        serde_json::from_slice(line).map_err(|e| (Json::Null, ProtoError::new("parse-error", e.to_string())))?;
    let Json::Object(mut m) = v else {
        return Err((Json::Null, ProtoError::new("invalid-request", "request must be a JSON object")));
    };
    let id = m.remove("id").unwrap_or(Json::Null);
    if !(id.is_number() || id.is_string()) {
        return Err((Json::Null, ProtoError::new("invalid-request", "request id must be a number or string")));
    }
    let Some(Json::String(method)) = m.remove("method") else {
        return Err((id, ProtoError::new("invalid-request", "missing method")));
    };
    let params = m.remove("params").unwrap_or(json!({}));
    if !params.is_object() {
        return Err((id, ProtoError::new("invalid-request", "params must be an object")));
    }
    Ok(Request { id, method, params })
}

pub fn time_json(t: LogicalTime) -> Json {
    json!({ "c": t.call_count, "b": t.back_jumps })
}

pub fn location_json(session: &DebugSession, stmt: StmtId) -> Json {
    let loc = session.location(stmt);
    let script = &session.program().scripts[loc.script_id as usize].name;
    json!({ "script": script, "line": loc.line, "col": loc.col, "stmt": stmt })
}

pub fn pause_json(session: &DebugSession, p: &Pause) -> Json {
    let mut reason = json!({ "kind": p.reason.name() });
    if let crate::ttd::StopReason::Breakpoint { id } = p.reason {
        reason["breakpoint"] = json!(id);
    }
    json!({
        "event": p.event,
        "location": location_json(session, p.stmt),
        "logicalTime": time_json(p.time),
        "depth": p.depth,
        "reason": reason,
        "text": session.describe(p.stmt),
    })
}

pub fn notice_json(n: &Notice) -> Json {
    match n {
        Notice::CheckpointCreated { event_index } => {
            notification("checkpointCreated", json!({ "eventIndex": event_index }))
        }
        Notice::Divergence { report } => notification(
            "divergence",
            json!({
                "report": {
                    "kind": report.kind.name(),
                    "eventIndex": report.event_index,
                    "interaction": report.interaction,
                    "logPos": report.log_pos,
                    "expected": report.expected,
                    "observed": report.observed,
                    "message": report.to_string(),
                }
            }),
        ),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TimeParam {
    c: u64,
    b: u64,
}

impl From<TimeParam> for LogicalTime {
    fn from(t: TimeParam) -> Self {
        LogicalTime::new(t.c, t.b)
    }
}

#[derive(Deserialize, Default)]
#[serde(rename_all = "camelCase")]
struct LocParams {
    stmt: Option<StmtId>,
    script: Option<String>,
    line: Option<u32>,
}

impl LocParams {
    fn resolve(&self, s: &DebugSession) -> Result<Option<StmtId>, ProtoError> {
        match (self.stmt, &self.script, self.line) {
            (Some(stmt), None, None) => Ok(Some(stmt)),
            (None, Some(script), Some(line)) => s
                .program()
                .stmt_at_line(script, line)
                .map(Some)
                .ok_or_else(|| DebugError::UnknownLocation(format!("{script}:{line}")).into()),
            (None, None, None) => Ok(None),
            _ => Err(ProtoError::new("invalid-params", "give either stmt or script and line")),
        }
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct BpSetParams {
    #[serde(flatten)]
    loc: LocParams,
    condition: Option<TimeParam>,
}

#[derive(Deserialize)]
struct BpClearParams {
    id: Option<u32>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct TravelParams {
    event: u64,
    #[serde(flatten)]
    loc: LocParams,
    time: Option<TimeParam>,
}

#[derive(Deserialize, Default)]
struct PageParams {
    offset: Option<usize>,
    limit: Option<usize>,
}

impl PageParams {
    fn page(&self) -> Page {
        let d = Page::default();
        Page { offset: self.offset.unwrap_or(d.offset), limit: self.limit.unwrap_or(d.limit) }
    }
}

#[derive(Deserialize)]
struct LocalsParams {
    frame: Option<usize>,
    #[serde(flatten)]
    page: PageParams,
}

#[derive(Deserialize)]
struct HeapParams {
    path: String,
    #[serde(flatten)]
    page: PageParams,
}

fn parse<T: for<'de> Deserialize<'de>>(params: &Json) -> Result<T, ProtoError> {
    serde_json::from_value(params.clone()).map_err(ProtoError::params)
}

/// Opens a trace for `session.open`: `{"trace": path}` or `{"demo": name}`
/// (records the bundled demo in memory).
pub fn load_trace(params: &Json) -> Result<Arc<Trace>, ProtoError> {
    #[derive(Deserialize)]
    struct P {
        trace: Option<String>,
        demo: Option<String>,
    }
    let p: P = parse(params)?;
    match (p.trace, p.demo) {
        (Some(path), None) => read_trace(Path::new(&path))
            .map(Arc::new)
            .map_err(|e| ProtoError::new("trace-unreadable", format!("{path}: {e}"))),
        (None, Some(name)) => {
            let d =
                demos::demo(&name).ok_or_else(|| ProtoError::new("invalid-params", format!("no demo named {name}")))?;
            let program = d.program().map_err(|e| ProtoError::new("trace-unreadable", e.to_string()))?;
            let scenario = d.scenario().map_err(|e| ProtoError::new("trace-unreadable", e.to_string()))?;
            Ok(Arc::new(record(Arc::new(program), &scenario, &RecordOptions::default())))
        }
        _ => Err(ProtoError::new("invalid-params", "give exactly one of trace or demo")),
    }
}

/// Summary returned by `session.open` and `timeline.info`.
pub fn timeline_json(s: &DebugSession) -> Json {
    let t = s.trace();
    let checkpoints: Vec<Json> = t
        .checkpoints
        .iter()
        .map(|c| json!({ "eventIndex": c.event_index, "clock": c.clock, "logPos": c.log_pos }))
        .collect();
    let events: Vec<Json> =
        t.summaries.iter().map(|e| json!({ "index": e.index, "at": e.at, "statements": e.statements })).collect();
    json!({
        "events": t.end.events,
        "endClock": t.end.clock,
        "checkpoints": checkpoints,
        "opportunistic": s.cache().opportunistic_events(),
        "eventTimes": events,
        "pause": s.pause().map(|p| pause_json(s, &p)),
    })
}

/// Outcome of one command against a session.
pub struct Outcome {
    pub result: Result<Json, ProtoError>,
    /// Notifications for session observers, in order, sent before the response.
    pub notifications: Vec<Json>,
}

pub fn is_exec(method: &str) -> bool {
    method.starts_with("exec.")
}

/// Runs one session-scoped method.
pub fn dispatch(s: &mut DebugSession, session_id: &str, method: &str, params: &Json) -> Outcome {
    let mut notes = Vec::new();
    let result = run(s, session_id, method, params, &mut notes);
    let mut notifications: Vec<Json> = s.take_notices().iter().map(notice_json).collect();
    for n in &mut notifications {
        n["params"]["session"] = json!(session_id);
    }
    notifications.extend(notes);
    Outcome { result, notifications }
}

fn stopped(s: &DebugSession, sid: &str, p: &Pause) -> Json {
    let mut v = pause_json(s, p);
    v["session"] = json!(sid);
    notification("stopped", v)
}

fn run(
    s: &mut DebugSession,
    sid: &str,
    method: &str,
    params: &Json,
    notes: &mut Vec<Json>,
) -> Result<Json, ProtoError> {
    let step =
        |s: &mut DebugSession, notes: &mut Vec<Json>, r: Result<Pause, DebugError>| -> Result<Json, ProtoError> {
            let p = r?;
            notes.push(stopped(s, sid, &p));
            Ok(json!({ "pause": pause_json(s, &p) }))
        };
    match method {
        "bp.set" => {
            let p: BpSetParams = parse(params)?;
            let stmt = p.loc.resolve(s)?.ok_or_else(|| ProtoError::new("invalid-params", "missing location"))?;
            let bp = s.set_breakpoint(stmt, p.condition.map(Into::into))?;
            Ok(breakpoint_json(s, &bp))
        }
        "bp.clear" => {
            let p: BpClearParams = parse(params)?;
            let cleared = match p.id {
                Some(id) => s.clear_breakpoint(id) as usize,
                None => {
                    let n = s.breakpoints().len();
                    s.clear_all_breakpoints();
                    n
                }
            };
            Ok(json!({ "cleared": cleared }))
        }
        "bp.list" => Ok(Json::Array(s.breakpoints().iter().map(|b| breakpoint_json(s, b)).collect())),
        "exec.continue" => match s.continue_forward()? {
            Stop::Paused(p) => {
                notes.push(stopped(s, sid, &p));
                Ok(json!({ "pause": pause_json(s, &p), "ended": false }))
            }
            Stop::Ended => {
                notes.push(notification("sessionEnded", json!({ "session": sid, "reason": "end-of-trace" })));
                Ok(json!({ "pause": null, "ended": true }))
            }
        },
        "exec.stepForward" => {
            let r = s.step_forward();
            step(s, notes, r)
        }
        "exec.stepOver" => {
            let r = s.step_over();
            step(s, notes, r)
        }
        "exec.stepOut" => {
            let r = s.step_out();
            step(s, notes, r)
        }
        "exec.stepBack" => {
            let r = s.step_back();
            step(s, notes, r)
        }
        "exec.reverseStepOver" => {
            let r = s.reverse_step_over();
            step(s, notes, r)
        }
        "exec.reverseStepOut" => {
            let r = s.reverse_step_out();
            step(s, notes, r)
        }
        "exec.travelTo" => {
            let p: TravelParams = parse(params)?;
            let r = match (p.loc.resolve(s)?, p.time) {
                (Some(stmt), Some(t)) => s.travel_to(p.event, stmt, t.into()),
                (None, None) => s.travel_to_event(p.event),
                _ => {
                    return Err(ProtoError::new(
                        "invalid-params",
                        "a location needs a time and a time needs a location",
                    ))
                }
            };
            step(s, notes, r)
        }
        "inspect.locals" => {
            let p: LocalsParams = parse(params)?;
            Ok(s.inspect_locals(p.frame.unwrap_or(0), p.page.page())?)
        }
        "inspect.stack" => Ok(s.inspect_stack()),
        "inspect.heap" => {
            let p: HeapParams = parse(params)?;
            Ok(s.inspect_heap(&p.path, p.page.page())?)
        }
        "inspect.dom" => {
            let p: PageParams = parse(params)?;
            Ok(s.inspect_dom(p.page()))
        }
        "inspect.timers" => Ok(s.inspect_timers()),
        "inspect.requests" => Ok(s.inspect_requests()),
        "inspect.storage" => Ok(s.inspect_storage()),
        "inspect.animations" => Ok(s.inspect_animations()),
        "timeline.info" => Ok(timeline_json(s)),
        _ => Err(ProtoError::new("unknown-method", format!("unknown method {method}"))),
    }
}

fn breakpoint_json(s: &DebugSession, b: &crate::ttd::Breakpoint) -> Json {
    json!({
        "id": b.id,
        "location": location_json(s, b.stmt),
        "condition": b.condition.map(time_json),
        "enabled": b.enabled,
    })
}

/// Methods handled by `dispatch` once a session is resolved.
pub const SESSION_METHODS: &[&str] = &[
    "bp.set",
    "bp.clear",
    "bp.list",
    "exec.continue",
    "exec.stepForward",
    "exec.stepOver",
    "exec.stepOut",
    "exec.stepBack",
    "exec.reverseStepOver",
    "exec.reverseStepOut",
    "exec.travelTo",
    "inspect.locals",
    "inspect.stack",
    "inspect.heap",
    "inspect.dom",
    "inspect.timers",
    "inspect.requests",
    "inspect.storage",
    "inspect.animations",
    "timeline.info",
];
