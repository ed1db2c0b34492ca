//! The time-travel debugger: breakpoints, forward and reverse stepping,
//! travel to any statement instance, and inspection of the paused state.
//!
//! Every position is `(event, statement, logical time)`. Logical time is
//! only meaningful within one event, because monitors are (re)enabled at
//! every event start.

mod cache;
pub mod inspect;
pub mod resolve;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guest::{InterpConfig, LogicalTime, Program, SourceLocation, StmtId};
use crate::machine::Step;
use crate::record::Trace;
use crate::replay::{DivergenceReport, ReplayError, Replayer};

pub use cache::{CheckpointCache, DEFAULT_CACHE_CAPACITY};
pub use inspect::Page;
pub use resolve::{resolve_step_back, FrameHint, Resolution, StepTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum StopReason {
    Entry,
    Step,
    Breakpoint { id: u32 },
    Travel,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Entry => "entry",
            StopReason::Step => "step",
            StopReason::Breakpoint { .. } => "breakpoint",
            StopReason::Travel => "travel",
        }
    }
}

/// A statement instance the session is paused at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pause {
    pub event: u64,
    pub stmt: StmtId,
    pub time: LogicalTime,
    /// Number of live frames.
    pub depth: usize,
    pub reason: StopReason,
}

impl Pause {
    pub fn same_instance(&self, other: &Pause) -> bool {
        self.event == other.event && self.stmt == other.stmt && self.time == other.time
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub id: u32,
    pub stmt: StmtId,
    pub location: SourceLocation,
    /// Fires only when the paused frame's logical time equals this.
    pub condition: Option<LogicalTime>,
    pub enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    Paused(Pause),
    /// Ran off the end of the trace.
    Ended,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum Notice {
    CheckpointCreated { event_index: u64 },
    Divergence { report: DivergenceReport },
}

/// Replay work done by the session, for amortization checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplayStats {
    /// Whole events replayed to reach travel targets.
    pub events_replayed: u64,
    pub restores: u64,
    /// Event index of the checkpoint used by the latest restore.
    pub last_restore_event: Option<u64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DebugError {
    #[error("no predecessor: already at the first statement of the trace")]
    NoPredecessor,
    #[error("no caller: paused in an outermost frame")]
    NoCaller,
    #[error("end of trace")]
    EndOfTrace,
    #[error("statement {location} at time {time} never executes in event {event}")]
    TargetNeverFires { event: u64, location: String, time: LogicalTime },
    #[error("unknown location {0}")]
    UnknownLocation(String),
    #[error("{0}")]
    OutOfRange(String),
    #[error("invalid heap path {0}")]
    InvalidHeapPath(String),
    #[error("{0}")]
    Divergence(DivergenceReport),
    #[error("replay failed: {0}")]
    Replay(String),
    #[error("engine fault: {0}")]
    EngineFault(String),
}

impl DebugError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            DebugError::NoPredecessor => "no-predecessor",
            DebugError::NoCaller => "no-caller",
            DebugError::EndOfTrace => "end-of-trace",
            DebugError::TargetNeverFires { .. } => "target-never-fires",
            DebugError::UnknownLocation(_) => "unknown-location",
            DebugError::OutOfRange(_) => "out-of-range",
            DebugError::InvalidHeapPath(_) => "invalid-heap-path",
            DebugError::Divergence(_) => "divergence",
            DebugError::Replay(_) => "replay-failed",
            DebugError::EngineFault(_) => "engine-fault",
        }
    }
}

impl From<DivergenceReport> for DebugError {
    fn from(r: DivergenceReport) -> Self {
        DebugError::Divergence(r)
    }
}

impl From<ReplayError> for DebugError {
    fn from(e: ReplayError) -> Self {
        match e {
            ReplayError::Divergence(r) => DebugError::Divergence(r),
            other => DebugError::Replay(other.to_string()),
        }
    }
}

enum Decision {
    Continue,
    Stop(StopReason),
    Abort,
}

enum Halt {
    Paused(Pause),
    End,
    Aborted,
}

fn set_live(r: &mut Replayer, live: bool) {
    let interp = &mut r.machine.interp;
    if interp.monitors_enabled() != live {
        if live {
            interp.enable_monitors();
        } else {
            interp.disable_monitors();
        }
    }
    interp.set_yield_statements(live);
}

/// Runs with monitors on, asking `decide` at every statement start.
fn drive(r: &mut Replayer, mut decide: impl FnMut(&Pause) -> Decision) -> Result<Halt, DebugError> {
    loop {
        if !r.in_event() {
            set_live(r, true);
            if r.begin_event()?.is_none() {
                return Ok(Halt::End);
            }
        }
        match r.run()? {
            Step::Statement(_) => {
                let interp = &r.machine.interp;
                let inst = interp.current_instance().map_err(|e| DebugError::EngineFault(e.to_string()))?;
                let p = Pause {
                    event: r.next_event() - 1,
                    stmt: inst.stmt,
                    time: inst.time,
                    depth: interp.depth(),
                    reason: StopReason::Step,
                };
                match decide(&p) {
                    Decision::Continue => {}
                    Decision::Stop(reason) => return Ok(Halt::Paused(Pause { reason, ..p })),
                    Decision::Abort => return Ok(Halt::Aborted),
                }
            }
            Step::EventDone(_) => {}
        }
    }
}

pub struct DebugSession {
    trace: Arc<Trace>,
    program: Arc<Program>,
    config: InterpConfig,
    replayer: Replayer,
    pause: Option<Pause>,
    breakpoints: Vec<Breakpoint>,
    next_breakpoint: u32,
    cache: CheckpointCache,
    stats: ReplayStats,
    notices: Vec<Notice>,
}

impl DebugSession {
    /// Opens a session paused at the first statement of the trace.
    pub fn open(trace: Arc<Trace>) -> Result<DebugSession, DebugError> {
        Self::with_cache_capacity(trace, DEFAULT_CACHE_CAPACITY)
    }

    pub fn with_cache_capacity(trace: Arc<Trace>, capacity: usize) -> Result<DebugSession, DebugError> {
        let program = trace.compile().map_err(|e| DebugError::Replay(e.to_string()))?;
        let config = InterpConfig::default();
        let mut cache = CheckpointCache::new(&trace, capacity);
        let (snap, event, pos) = cache.best(&trace, 0).map_err(|e| DebugError::Replay(e.to_string()))?;
        let replayer = Replayer::from_snapshot(trace.clone(), program.clone(), snap, event, pos, config);
        let mut s = DebugSession {
            trace,
            program,
            config,
            replayer,
            pause: None,
            breakpoints: Vec::new(),
            next_breakpoint: 1,
            cache,
            stats: ReplayStats::default(),
            notices: Vec::new(),
        };
        s.stats.restores = 1;
        s.stats.last_restore_event = Some(0);
        let halt = s.guard(|r| drive(r, |_| Decision::Stop(StopReason::Entry)))?;
        if let Halt::Paused(p) = halt {
            s.pause = Some(p);
        }
        Ok(s)
    }

    pub fn trace(&self) -> &Arc<Trace> {
        &self.trace
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    /// `None` once execution has run past the last statement.
    pub fn pause(&self) -> Option<Pause> {
        self.pause
    }

    pub fn stats(&self) -> ReplayStats {
        self.stats
    }

    pub fn cache(&self) -> &CheckpointCache {
        &self.cache
    }

    pub fn take_notices(&mut self) -> Vec<Notice> {
        std::mem::take(&mut self.notices)
    }

    pub fn replayer(&self) -> &Replayer {
        &self.replayer
    }

    pub fn location(&self, stmt: StmtId) -> SourceLocation {
        self.program.stmt(stmt).loc
    }

    pub fn describe(&self, stmt: StmtId) -> String {
        self.program.describe(stmt)
    }

    fn guard<T>(&mut self, f: impl FnOnce(&mut Replayer) -> Result<T, DebugError>) -> Result<T, DebugError> {
        let r = f(&mut self.replayer);
        if let Err(DebugError::Divergence(report)) = &r {
            self.notices.push(Notice::Divergence { report: report.clone() });
        }
        r
    }

    // ---- breakpoints ----

    pub fn set_breakpoint(&mut self, stmt: StmtId, condition: Option<LogicalTime>) -> Result<Breakpoint, DebugError> {
        if stmt as usize >= self.program.statements.len() {
            return Err(DebugError::UnknownLocation(format!("statement {stmt}")));
        }
        let bp = Breakpoint { id: self.next_breakpoint, stmt, location: self.location(stmt), condition, enabled: true };
        self.next_breakpoint += 1;
        self.breakpoints.push(bp.clone());
        Ok(bp)
    }

    /// Breakpoint on the first statement of `script` starting at `line`.
    pub fn set_breakpoint_at_line(
        &mut self,
        script: &str,
        line: u32,
        condition: Option<LogicalTime>,
    ) -> Result<Breakpoint, DebugError> {
        let stmt = self
            .program
            .stmt_at_line(script, line)
            .ok_or_else(|| DebugError::UnknownLocation(format!("{script}:{line}")))?;
        self.set_breakpoint(stmt, condition)
    }

    pub fn clear_breakpoint(&mut self, id: u32) -> bool {
        let before = self.breakpoints.len();
        self.breakpoints.retain(|b| b.id != id);
        before != self.breakpoints.len()
    }

    pub fn clear_all_breakpoints(&mut self) {
        self.breakpoints.clear();
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.breakpoints
    }

    fn hit(breakpoints: &[Breakpoint], p: &Pause) -> Option<u32> {
        breakpoints
            .iter()
            .find(|b| b.enabled && b.stmt == p.stmt && b.condition.is_none_or(|t| t == p.time))
            .map(|b| b.id)
    }

    // ---- forward ----

    fn paused(&self) -> Result<Pause, DebugError> {
        self.pause.ok_or(DebugError::EndOfTrace)
    }

    /// Forward motion that must not leave the trace: on running off the end
    /// the session returns to where it was.
    fn forward(&mut self, mut decide: impl FnMut(&Pause) -> Option<StopReason>) -> Result<Pause, DebugError> {
        let start = self.paused()?;
        let bps = self.breakpoints.clone();
        let halt = self.guard(|r| {
            drive(r, |p| match Self::hit(&bps, p) {
                Some(id) => Decision::Stop(StopReason::Breakpoint { id }),
                None => decide(p).map_or(Decision::Continue, Decision::Stop),
            })
        })?;
        match halt {
            Halt::Paused(p) => {
                self.pause = Some(p);
                Ok(p)
            }
            _ => {
                self.travel_to(start.event, start.stmt, start.time)?;
                self.pause = Some(start);
                Err(DebugError::EndOfTrace)
            }
        }
    }

    pub fn step_forward(&mut self) -> Result<Pause, DebugError> {
        self.forward(|_| Some(StopReason::Step))
    }

    /// Next statement in the same or an outer frame; crossing into the next
    /// event also stops.
    pub fn step_over(&mut self) -> Result<Pause, DebugError> {
        let start = self.paused()?;
        self.forward(|p| (p.event != start.event || p.depth <= start.depth).then_some(StopReason::Step))
    }

    pub fn step_out(&mut self) -> Result<Pause, DebugError> {
        let start = self.paused()?;
        self.forward(|p| (p.event != start.event || p.depth < start.depth).then_some(StopReason::Step))
    }

    /// Runs until a breakpoint fires or the trace ends.
    pub fn continue_forward(&mut self) -> Result<Stop, DebugError> {
        self.paused()?;
        let bps = self.breakpoints.clone();
        let halt = if bps.iter().any(|b| b.enabled) {
            self.guard(|r| {
                drive(r, |p| match Self::hit(&bps, p) {
                    Some(id) => Decision::Stop(StopReason::Breakpoint { id }),
                    None => Decision::Continue,
                })
            })?
        } else {
            self.guard(|r| {
                // Nothing can stop us: finish the current event, then fast-forward.
                if r.in_event() {
                    r.finish_event()?;
                }
                set_live(r, false);
                while r.step_event()?.is_some() {}
                set_live(r, true);
                Ok(Halt::End)
            })?
        };
        match halt {
            Halt::Paused(p) => {
                self.pause = Some(p);
                Ok(Stop::Paused(p))
            }
            _ => {
                self.pause = None;
                Ok(Stop::Ended)
            }
        }
    }

    // ---- travel ----

    /// A fresh replayer positioned just before event `event` is dispatched,
    /// restored from the nearest checkpoint. Records an opportunistic
    /// checkpoint when whole events had to be replayed.
    fn replayer_at_event_start(&mut self, event: u64) -> Result<Replayer, DebugError> {
        if event >= self.trace.end.events {
            return Err(DebugError::OutOfRange(format!(
                "event {event} out of range (trace has {} events)",
                self.trace.end.events
            )));
        }
        let (snap, from, pos) = self.cache.best(&self.trace, event).map_err(|e| DebugError::Replay(e.to_string()))?;
        let mut r = Replayer::from_snapshot(self.trace.clone(), self.program.clone(), snap, from, pos, self.config);
        self.stats.restores += 1;
        self.stats.last_restore_event = Some(from);
        set_live(&mut r, false);
        while r.next_event() < event {
            let res = r.step_event();
            match res {
                Ok(Some(_)) => self.stats.events_replayed += 1,
                Ok(None) => return Err(DebugError::OutOfRange(format!("event {event} not in trace"))),
                Err(report) => {
                    self.notices.push(Notice::Divergence { report: report.clone() });
                    return Err(DebugError::Divergence(report));
                }
            }
        }
        if from < event {
            self.cache.insert(event, r.log_pos(), r.snapshot());
            self.notices.push(Notice::CheckpointCreated { event_index: event });
        }
        set_live(&mut r, true);
        Ok(r)
    }

    /// Pauses at statement `stmt` executing at logical time `time` in `event`.
    pub fn travel_to(&mut self, event: u64, stmt: StmtId, time: LogicalTime) -> Result<Pause, DebugError> {
        if stmt as usize >= self.program.statements.len() {
            return Err(DebugError::UnknownLocation(format!("statement {stmt}")));
        }
        let mut r = self.replayer_at_event_start(event)?;
        let halt = drive(&mut r, |p| {
            if p.event != event {
                Decision::Abort
            } else if p.stmt == stmt && p.time == time {
                Decision::Stop(StopReason::Travel)
            } else {
                Decision::Continue
            }
        });
        match halt {
            Ok(Halt::Paused(p)) => {
                self.replayer = r;
                self.pause = Some(p);
                Ok(p)
            }
            Ok(_) => Err(DebugError::TargetNeverFires { event, location: self.describe(stmt), time }),
            Err(e) => {
                if let DebugError::Divergence(report) = &e {
                    self.notices.push(Notice::Divergence { report: report.clone() });
                }
                Err(e)
            }
        }
    }

    /// Pauses at the first statement of the first event at or after `event`
    /// that runs any guest code.
    pub fn travel_to_event(&mut self, event: u64) -> Result<Pause, DebugError> {
        let mut r = self.replayer_at_event_start(event)?;
        match drive(&mut r, |_| Decision::Stop(StopReason::Travel))? {
            Halt::Paused(p) => {
                self.replayer = r;
                self.pause = Some(p);
                Ok(p)
            }
            _ => Err(DebugError::OutOfRange(format!("no guest code runs at or after event {event}"))),
        }
    }

    /// All statement instances of `event` in execution order, with depths.
    pub fn event_statements(&mut self, event: u64) -> Result<Vec<Pause>, DebugError> {
        let mut r = self.replayer_at_event_start(event)?;
        let mut out = Vec::new();
        drive(&mut r, |p| {
            if p.event != event {
                return Decision::Abort;
            }
            out.push(*p);
            Decision::Continue
        })?;
        Ok(out)
    }

    fn last_event_with_code(&self, before: u64) -> Option<u64> {
        (0..before).rev().find(|&j| self.trace.summaries.get(j as usize).is_some_and(|s| s.statements > 0))
    }

    fn travel_to_last_statement_of(&mut self, event: u64) -> Result<Pause, DebugError> {
        let all = self.event_statements(event)?;
        let last = all.last().ok_or_else(|| DebugError::EngineFault(format!("event {event} ran no statements")))?;
        self.travel_to(event, last.stmt, last.time)
    }

    // ---- reverse ----

    /// The statement instance executed just before the paused one.
    pub fn step_back_target(&self) -> Result<(u64, Option<StepTarget>), DebugError> {
        let Some(p) = self.pause else {
            let j = self.last_event_with_code(self.trace.end.events).ok_or(DebugError::NoPredecessor)?;
            return Ok((j, None));
        };
        let interp = &self.replayer.machine.interp;
        let inst = interp.current_instance().map_err(|e| DebugError::EngineFault(e.to_string()))?;
        let res = resolve_step_back(&self.program, inst, interp.branch_trace_store(), &interp.frames())
            .map_err(|e| DebugError::EngineFault(e.to_string()))?;
        match res {
            Resolution::Target(t) => Ok((p.event, Some(t))),
            Resolution::EventStart => {
                let j = self.last_event_with_code(p.event).ok_or(DebugError::NoPredecessor)?;
                Ok((j, None))
            }
        }
    }

    pub fn step_back(&mut self) -> Result<Pause, DebugError> {
        let p = match self.step_back_target()? {
            (event, Some(t)) => self.travel_to(event, t.stmt, t.time)?,
            (event, None) => self.travel_to_last_statement_of(event)?,
        };
        let p = Pause { reason: StopReason::Step, ..p };
        self.pause = Some(p);
        Ok(p)
    }

    /// Previous statement instance whose frame depth is at most the current
    /// one, skipping the insides of calls that have completed.
    pub fn reverse_step_over(&mut self) -> Result<Pause, DebugError> {
        let (event, depth, until) = match self.pause {
            Some(p) => (p.event, p.depth, Some(p)),
            None => (self.trace.end.events, usize::MAX, None),
        };
        let mut found = None;
        if let Some(cur) = until {
            let trace = self.event_statements(cur.event)?;
            let upto = trace.iter().position(|q| q.same_instance(&cur)).unwrap_or(trace.len());
            found = trace[..upto].iter().rev().find(|q| q.depth <= depth).copied();
        }
        let mut before = event;
        while found.is_none() {
            let Some(j) = self.last_event_with_code(before) else { return Err(DebugError::NoPredecessor) };
            found = self.event_statements(j)?.into_iter().rev().find(|q| q.depth <= depth);
            before = j;
        }
        let q = found.unwrap();
        let p = Pause { reason: StopReason::Step, ..self.travel_to(q.event, q.stmt, q.time)? };
        self.pause = Some(p);
        Ok(p)
    }

    /// The call statement instance in the caller of the paused frame.
    pub fn reverse_step_out(&mut self) -> Result<Pause, DebugError> {
        let p = self.paused()?;
        let frames = self.replayer.machine.interp.frames();
        if frames.len() < 2 {
            return Err(DebugError::NoCaller);
        }
        let caller = &frames[frames.len() - 2];
        let stmt = caller.stmt.ok_or_else(|| DebugError::EngineFault("caller has no current statement".into()))?;
        let q = Pause { reason: StopReason::Step, ..self.travel_to(p.event, stmt, caller.time)? };
        self.pause = Some(q);
        Ok(q)
    }
}
