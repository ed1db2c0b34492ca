//! Line-oriented debug scripts. The whole script is parsed before anything
//! runs, so a typo fails fast with no output.

use std::fmt::Write as _;

use serde_json::Value as Json;

use crate::guest::{LogicalTime, StmtId};
use crate::ttd::inspect::value_text;
use crate::ttd::{DebugError, DebugSession, Notice, Page, Pause, Stop};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Loc {
    Line { script: String, line: u32 },
    Stmt(StmtId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Inspect {
    Locals(usize),
    Stack,
    Heap(String),
    Dom,
    Timers,
    Requests,
    Storage,
    Animations,
    Timeline,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Break { loc: Loc, condition: Option<LogicalTime> },
    Clear(Option<u32>),
    ListBreakpoints,
    Step,
    Over,
    Out,
    Continue,
    StepBack,
    BackOver,
    BackOut,
    Travel { event: u64, at: Option<(Loc, LogicalTime)> },
    Where,
    Print(String),
    Inspect(Inspect),
    Stats,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

fn parse_loc(s: &str) -> Option<Loc> {
    if let Some(n) = s.strip_prefix('#') {
        return n.parse().ok().map(Loc::Stmt);
    }
    let (script, line) = s.rsplit_once(':')?;
    Some(Loc::Line { script: script.to_string(), line: line.parse().ok()? })
}

/// `3,2` or `(3,2)`.
fn parse_time(s: &str) -> Option<LogicalTime> {
    let s = s.trim_start_matches('(').trim_end_matches(')');
    let (c, b) = s.split_once(',')?;
    Some(LogicalTime::new(c.trim().parse().ok()?, b.trim().parse().ok()?))
}

const KNOWN: &[&str] = &[
    "bp", "clear", "bps", "step", "over", "next", "out", "continue", "c", "stepback", "back", "backover", "backout",
    "travel", "where", "print", "inspect", "stats",
];

pub fn parse_command(line: &str) -> Result<Option<Command>, String> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let words: Vec<&str> = line.split_whitespace().collect();
    let bad = || format!("cannot parse `{line}`");
    let cmd = match words.as_slice() {
        ["bp", loc] => Command::Break { loc: parse_loc(loc).ok_or_else(bad)?, condition: None },
        ["bp", loc, "if", t] => {
            Command::Break { loc: parse_loc(loc).ok_or_else(bad)?, condition: Some(parse_time(t).ok_or_else(bad)?) }
        }
        ["clear", "all"] => Command::Clear(None),
        ["clear", id] => Command::Clear(Some(id.parse().map_err(|_| bad())?)),
        ["bps"] => Command::ListBreakpoints,
        ["step"] => Command::Step,
        ["over"] | ["next"] => Command::Over,
        ["out"] => Command::Out,
        ["continue"] | ["c"] => Command::Continue,
        ["stepback"] | ["back"] => Command::StepBack,
        ["backover"] => Command::BackOver,
        ["backout"] => Command::BackOut,
        ["travel", e] => Command::Travel { event: e.parse().map_err(|_| bad())?, at: None },
        ["travel", e, loc, t] => Command::Travel {
            event: e.parse().map_err(|_| bad())?,
            at: Some((parse_loc(loc).ok_or_else(bad)?, parse_time(t).ok_or_else(bad)?)),
        },
        ["where"] | ["print"] => Command::Where,
        ["print", path] => Command::Print(path.to_string()),
        ["inspect", "locals"] => Command::Inspect(Inspect::Locals(0)),
        ["inspect", "locals", f] => Command::Inspect(Inspect::Locals(f.parse().map_err(|_| bad())?)),
        ["inspect", "stack"] => Command::Inspect(Inspect::Stack),
        ["inspect", "heap", path] => Command::Inspect(Inspect::Heap(path.to_string())),
        ["inspect", "dom"] => Command::Inspect(Inspect::Dom),
        ["inspect", "timers"] => Command::Inspect(Inspect::Timers),
        ["inspect", "requests"] => Command::Inspect(Inspect::Requests),
        ["inspect", "storage"] => Command::Inspect(Inspect::Storage),
        ["inspect", "animations"] => Command::Inspect(Inspect::Animations),
        ["inspect", "timeline"] => Command::Inspect(Inspect::Timeline),
        ["stats"] => Command::Stats,
        [w, ..] if KNOWN.contains(w) => return Err(bad()),
        [w, ..] => return Err(format!("unknown command `{w}`")),
        [] => unreachable!(),
    };
    Ok(Some(cmd))
}

pub fn parse_script(text: &str) -> Result<Vec<(String, Command)>, ScriptError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        match parse_command(line) {
            Ok(Some(c)) => out.push((line.trim().to_string(), c)),
            Ok(None) => {}
            Err(message) => return Err(ScriptError { line: i + 1, message }),
        }
    }
    Ok(out)
}

fn source_line(s: &DebugSession, stmt: StmtId) -> String {
    let loc = s.location(stmt);
    let text = &s.program().sources[loc.script_id as usize].text;
    text.lines().nth(loc.line as usize - 1).unwrap_or("").trim().to_string()
}

pub fn pause_text(s: &DebugSession, p: &Pause) -> String {
    let reason = match p.reason {
        crate::ttd::StopReason::Breakpoint { id } => format!("breakpoint {id}"),
        r => r.name().to_string(),
    };
    format!(
        "event {} at {} t={} depth {} [{}] | {}",
        p.event,
        s.describe(p.stmt),
        p.time,
        p.depth,
        reason,
        source_line(s, p.stmt)
    )
}

fn resolve(s: &DebugSession, loc: &Loc) -> Result<StmtId, DebugError> {
    match loc {
        Loc::Stmt(id) => Ok(*id),
        Loc::Line { script, line } => s
            .program()
            .stmt_at_line(script, *line)
            .ok_or_else(|| DebugError::UnknownLocation(format!("{script}:{line}"))),
    }
}

fn json_text(j: &Json) -> String {
    serde_json::to_string_pretty(j).expect("json values serialize")
}

/// Output of one command; `Err` output is printed as an error line.
fn exec(s: &mut DebugSession, cmd: &Command) -> Result<String, DebugError> {
    let paused = |s: &DebugSession, p: Pause| pause_text(s, &p);
    Ok(match cmd {
        Command::Break { loc, condition } => {
            let stmt = resolve(s, loc)?;
            let b = s.set_breakpoint(stmt, *condition)?;
            let cond = b.condition.map(|t| format!(" if {t}")).unwrap_or_default();
            format!("breakpoint {} at {}{}", b.id, s.describe(b.stmt), cond)
        }
        Command::Clear(Some(id)) => format!("cleared {}", s.clear_breakpoint(*id) as u32),
        Command::Clear(None) => {
            let n = s.breakpoints().len();
            s.clear_all_breakpoints();
            format!("cleared {n}")
        }
        Command::ListBreakpoints => {
            let lines: Vec<String> = s
                .breakpoints()
                .iter()
                .map(|b| {
                    let cond = b.condition.map(|t| format!(" if {t}")).unwrap_or_default();
                    format!("{} {}{}", b.id, s.describe(b.stmt), cond)
                })
                .collect();
            if lines.is_empty() {
                "no breakpoints".into()
            } else {
                lines.join("\n")
            }
        }
        Command::Continue => match s.continue_forward()? {
            Stop::Paused(p) => paused(s, p),
            Stop::Ended => "ended".into(),
        },
        Command::Step | Command::Over | Command::Out | Command::StepBack | Command::BackOver | Command::BackOut => {
            let p = match cmd {
                Command::Step => s.step_forward(),
                Command::Over => s.step_over(),
                Command::Out => s.step_out(),
                Command::StepBack => s.step_back(),
                Command::BackOver => s.reverse_step_over(),
                _ => s.reverse_step_out(),
            }?;
            paused(s, p)
        }
        Command::Travel { event, at: None } => {
            let p = s.travel_to_event(*event)?;
            paused(s, p)
        }
        Command::Travel { event, at: Some((loc, t)) } => {
            let stmt = resolve(s, loc)?;
            let p = s.travel_to(*event, stmt, *t)?;
            paused(s, p)
        }
        Command::Where => match s.pause() {
            Some(p) => paused(s, p),
            None => "ended".into(),
        },
        Command::Print(path) => {
            let v = s.inspect_heap(path, Page::default())?;
            format!("{path} = {}", value_text(&v["value"]))
        }
        Command::Inspect(what) => json_text(&match what {
            Inspect::Locals(f) => s.inspect_locals(*f, Page::default())?,
            Inspect::Stack => s.inspect_stack(),
            Inspect::Heap(path) => s.inspect_heap(path, Page::default())?,
            Inspect::Dom => s.inspect_dom(Page::default()),
            Inspect::Timers => s.inspect_timers(),
            Inspect::Requests => s.inspect_requests(),
            Inspect::Storage => s.inspect_storage(),
            Inspect::Animations => s.inspect_animations(),
            Inspect::Timeline => crate::proto::timeline_json(s),
        }),
        Command::Stats => {
            let st = s.stats();
            format!(
                "restores {} events-replayed {} last-restore {} opportunistic {:?}",
                st.restores,
                st.events_replayed,
                st.last_restore_event.map(|e| e.to_string()).unwrap_or_else(|| "-".into()),
                s.cache().opportunistic_events()
            )
        }
    })
}

/// Runs `commands`, appending text output. Returns whether a divergence was
/// seen.
pub fn run_script(s: &mut DebugSession, commands: &[(String, Command)], out: &mut String) -> bool {
    let mut diverged = false;
    for (line, cmd) in commands {
        let _ = writeln!(out, "> {line}");
        match exec(s, cmd) {
            Ok(text) => {
                let _ = writeln!(out, "{text}");
            }
            Err(e) => {
                diverged |= matches!(e, DebugError::Divergence(_));
                let _ = writeln!(out, "error[{}]: {e}", e.code());
            }
        }
        for n in s.take_notices() {
            match n {
                Notice::CheckpointCreated { event_index } => {
                    let _ = writeln!(out, "  (checkpoint created at event {event_index})");
                }
                Notice::Divergence { .. } => diverged = true,
            }
        }
    }
    diverged
}
