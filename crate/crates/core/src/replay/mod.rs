//! Deterministic replay of a recorded trace from any checkpoint, with
//! divergence detection.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guest::{HostCallKind, InterpConfig, Program, ProgramError};
use crate::host::{HostWorld, Interposer};
use crate::machine::{EventOutcome, Machine, Step};
use crate::record::{capture, describe_compact, LogEntry, Snapshot, SnapshotError, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivergenceKind {
    UnexpectedHostCall,
    MissingLogEntry,
    LeftoverEntries,
    StateMismatch,
}

impl DivergenceKind {
    pub fn name(self) -> &'static str {
        match self {
            DivergenceKind::UnexpectedHostCall => "unexpected-host-call",
            DivergenceKind::MissingLogEntry => "missing-log-entry",
            DivergenceKind::LeftoverEntries => "leftover-entries",
            DivergenceKind::StateMismatch => "state-mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub kind: DivergenceKind,
    pub event_index: u64,
    pub interaction: u64,
    pub log_pos: u64,
    pub expected: String,
    pub observed: String,
}

impl fmt::Display for DivergenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "divergence ({}) at event {}, interaction {}, log entry {}: expected {}, observed {}",
            self.kind.name(),
            self.event_index,
            self.interaction,
            self.log_pos,
            self.expected,
            self.observed
        )
    }
}

impl std::error::Error for DivergenceReport {}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Divergence(#[from] DivergenceReport),
    #[error("trace program does not compile: {0}")]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("no checkpoint {0}")]
    NoCheckpoint(usize),
}

fn describe_entry(e: Option<&LogEntry>) -> String {
    match e {
        None => "end of log".into(),
        Some(LogEntry::Simple { interaction, kind, value }) => {
            format!("{} result {value} at interaction {interaction}", kind.name())
        }
        Some(LogEntry::Event { event_index, descriptor, .. }) => {
            format!("event {event_index} ({})", descriptor.describe())
        }
        Some(LogEntry::InterEvent { before_event, updates }) => {
            format!("{} host updates before event {before_event}", updates.len())
        }
        Some(LogEntry::Concurrent { interaction, updates }) => {
            format!("{} host updates at interaction {interaction}", updates.len())
        }
    }
}

struct ReplayHooks<'a> {
    log: &'a [LogEntry],
    cursor: &'a mut usize,
    event: u64,
}

impl ReplayHooks<'_> {
    fn report(&self, kind: DivergenceKind, interaction: u64, expected: String, observed: String) -> DivergenceReport {
        DivergenceReport {
            kind,
            event_index: self.event,
            interaction,
            log_pos: *self.cursor as u64,
            expected,
            observed,
        }
    }
}

impl Interposer for ReplayHooks<'_> {
    type Error = DivergenceReport;

    fn before_call(&mut self, world: &mut HostWorld, kind: HostCallKind) -> Result<(), DivergenceReport> {
        let counter = world.interactions;
        while let Some(LogEntry::Concurrent { interaction, updates }) = self.log.get(*self.cursor) {
            if *interaction > counter {
                break;
            }
            if *interaction < counter {
                return Err(self.report(
                    DivergenceKind::MissingLogEntry,
                    counter,
                    describe_entry(self.log.get(*self.cursor)),
                    format!("{} call at interaction {counter}", kind.name()),
                ));
            }
            for u in updates {
                if let Err(e) = world.apply_update(u) {
                    return Err(self.report(DivergenceKind::StateMismatch, counter, format!("{u:?}"), e));
                }
            }
            *self.cursor += 1;
        }
        match self.log.get(*self.cursor) {
            Some(LogEntry::Simple { interaction, kind: k, .. }) if *interaction == counter && *k != kind => Err(self
                .report(
                    DivergenceKind::UnexpectedHostCall,
                    counter,
                    format!("{} call", k.name()),
                    format!("{} call", kind.name()),
                )),
            Some(e @ LogEntry::Simple { interaction, .. }) if *interaction < counter => Err(self.report(
                DivergenceKind::UnexpectedHostCall,
                counter,
                describe_entry(Some(e)),
                format!("{} call at interaction {counter}", kind.name()),
            )),
            _ => Ok(()),
        }
    }

    fn logged(&mut self, world: &HostWorld, kind: HostCallKind, _: u64) -> Result<u64, DivergenceReport> {
        let counter = world.interactions;
        match self.log.get(*self.cursor) {
            Some(LogEntry::Simple { interaction, kind: k, value }) if *interaction == counter && *k == kind => {
                *self.cursor += 1;
                Ok(*value)
            }
            other => Err(self.report(
                DivergenceKind::MissingLogEntry,
                counter,
                format!("{} result at interaction {counter}", kind.name()),
                describe_entry(other),
            )),
        }
    }
}

/// How much replay checks against the recorded summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Checks {
    /// Statement counts, host call digests and interaction counters.
    Cheap,
    /// Also heap and host state digests after every event.
    Full,
}

/// Replays events in order from a restored checkpoint.
#[derive(Debug, Clone)]
pub struct Replayer {
    trace: Arc<Trace>,
    pub machine: Machine,
    cursor: usize,
    next_event: u64,
    finished: bool,
    checks: Checks,
}

impl Replayer {
    pub fn from_checkpoint(
        trace: Arc<Trace>,
        program: Arc<Program>,
        index: usize,
        config: InterpConfig,
    ) -> Result<Replayer, ReplayError> {
        let cp = trace.checkpoints.get(index).ok_or(ReplayError::NoCheckpoint(index))?;
        let snap = cp.snapshot()?;
        let (event, pos) = (cp.event_index, cp.log_pos as usize);
        Ok(Self::from_snapshot(trace, program, snap, event, pos, config))
    }

    pub fn from_snapshot(
        trace: Arc<Trace>,
        program: Arc<Program>,
        snap: Snapshot,
        next_event: u64,
        log_pos: usize,
        config: InterpConfig,
    ) -> Replayer {
        Replayer {
            trace,
            machine: snap.restore(program, config),
            cursor: log_pos,
            next_event,
            finished: false,
            checks: Checks::Cheap,
        }
    }

    pub fn set_checks(&mut self, checks: Checks) {
        self.checks = checks;
    }

    pub fn trace(&self) -> &Arc<Trace> {
        &self.trace
    }

    pub fn log_pos(&self) -> usize {
        self.cursor
    }

    /// Index of the event that the next `begin_event` dispatches, or the
    /// running event's index plus one while an event is in progress.
    pub fn next_event(&self) -> u64 {
        self.next_event
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    pub fn in_event(&self) -> bool {
        self.machine.in_event()
    }

    fn report(&self, kind: DivergenceKind, expected: String, observed: String) -> DivergenceReport {
        DivergenceReport {
            kind,
            event_index: self.next_event,
            interaction: self.machine.world.interactions,
            log_pos: self.cursor as u64,
            expected,
            observed,
        }
    }

    /// Applies between-event updates and starts the next event. Returns its
    /// index, or `None` once the log is exhausted.
    /// Applies the host updates logged between the previous event and the
    /// next one, leaving the world as it was just before dispatch.
    pub fn settle(&mut self) -> Result<(), DivergenceReport> {
        assert!(!self.machine.in_event());
        let trace = self.trace.clone();
        while let Some(LogEntry::InterEvent { before_event, updates }) = trace.log.get(self.cursor) {
            if *before_event != self.next_event {
                return Err(self.report(
                    DivergenceKind::MissingLogEntry,
                    format!("host updates before event {}", self.next_event),
                    describe_entry(trace.log.get(self.cursor)),
                ));
            }
            for u in updates {
                if let Err(e) = self.machine.world.apply_update(u) {
                    return Err(self.report(DivergenceKind::StateMismatch, format!("{u:?}"), e));
                }
            }
            self.cursor += 1;
        }
        // The world has already reached the next event's time.
        let due = match trace.log.get(self.cursor) {
            Some(LogEntry::Event { event_index, at, .. }) if *event_index == self.next_event => *at,
            None if self.next_event == trace.end.events => trace.end.clock,
            _ => 0,
        };
        let w = &mut self.machine.world;
        w.clock = w.clock.max(due);
        Ok(())
    }

    pub fn begin_event(&mut self) -> Result<Option<u64>, DivergenceReport> {
        assert!(!self.machine.in_event());
        if self.finished {
            return Ok(None);
        }
        let trace = self.trace.clone();
        loop {
            match trace.log.get(self.cursor) {
                None => {
                    if self.next_event != trace.end.events {
                        return Err(self.report(
                            DivergenceKind::MissingLogEntry,
                            format!("{} events", trace.end.events),
                            format!("log ends after {} events", self.next_event),
                        ));
                    }
                    let w = &mut self.machine.world;
                    w.clock = w.clock.max(trace.end.clock);
                    self.finished = true;
                    return Ok(None);
                }
                Some(LogEntry::InterEvent { .. }) => self.settle()?,
                Some(LogEntry::Event { event_index, at, descriptor, .. }) => {
                    if *event_index != self.next_event {
                        return Err(self.report(
                            DivergenceKind::MissingLogEntry,
                            format!("event {}", self.next_event),
                            format!("event {event_index}"),
                        ));
                    }
                    if *at < self.machine.world.clock {
                        return Err(self.report(
                            DivergenceKind::StateMismatch,
                            format!("clock at most {at}"),
                            format!("clock {}", self.machine.world.clock),
                        ));
                    }
                    self.machine.world.clock = *at;
                    self.cursor += 1;
                    self.machine.begin_event(*event_index, descriptor);
                    self.next_event += 1;
                    return Ok(Some(*event_index));
                }
                Some(e) => {
                    return Err(self.report(
                        DivergenceKind::LeftoverEntries,
                        format!("event {}", self.next_event),
                        describe_entry(Some(e)),
                    ))
                }
            }
        }
    }

    /// Runs the current event to the next statement or to its end.
    pub fn run(&mut self) -> Result<Step, DivergenceReport> {
        let event = self.machine.current_event().expect("no event in progress");
        let mut hooks = ReplayHooks { log: &self.trace.log, cursor: &mut self.cursor, event };
        let step = self.machine.run(&mut hooks)?;
        if let Step::EventDone(out) = &step {
            self.check_event(out)?;
        }
        Ok(step)
    }

    pub fn finish_event(&mut self) -> Result<EventOutcome, DivergenceReport> {
        loop {
            if let Step::EventDone(o) = self.run()? {
                return Ok(o);
            }
        }
    }

    /// Replays the next whole event.
    pub fn step_event(&mut self) -> Result<Option<EventOutcome>, DivergenceReport> {
        match self.begin_event()? {
            None => Ok(None),
            Some(_) => self.finish_event().map(Some),
        }
    }

    fn check_event(&self, out: &EventOutcome) -> Result<(), DivergenceReport> {
        let report = |kind, expected: String, observed: String| DivergenceReport {
            kind,
            event_index: out.index,
            interaction: self.machine.world.interactions,
            log_pos: self.cursor as u64,
            expected,
            observed,
        };
        if let Some(e @ (LogEntry::Simple { .. } | LogEntry::Concurrent { .. })) = self.trace.log.get(self.cursor) {
            return Err(report(
                DivergenceKind::LeftoverEntries,
                format!("end of event {}", out.index),
                describe_entry(Some(e)),
            ));
        }
        let Some(s) = self.trace.summaries.get(out.index as usize) else { return Ok(()) };
        let observed_seq = match self.trace.event_entry(out.index) {
            Some((seq, ..)) => seq,
            None => s.seq,
        };
        let pairs = [
            ("sequence number", s.seq, observed_seq),
            ("statements", s.statements, out.completion.statements),
            ("host calls", s.host_calls, out.completion.host_interactions),
            ("interaction counter", s.interactions_end, self.machine.world.interactions),
            ("host call digest", s.call_digest, out.call_digest),
        ];
        for (what, want, got) in pairs {
            if want != got {
                return Err(report(DivergenceKind::StateMismatch, format!("{what} {want}"), format!("{what} {got}")));
            }
        }
        if self.checks == Checks::Full {
            let got = capture(&self.machine.interp, &self.machine.world).state_digest();
            if got != s.state_digest {
                return Err(report(
                    DivergenceKind::StateMismatch,
                    format!("state digest {:016x}", s.state_digest),
                    format!("state digest {got:016x}"),
                ));
            }
        }
        Ok(())
    }

    /// Compacted image of the current state; only between events.
    pub fn snapshot(&self) -> Snapshot {
        capture(&self.machine.interp, &self.machine.world)
    }

    /// Checks the end-of-run state against the recording.
    pub fn check_end(&self) -> Result<(), DivergenceReport> {
        let snap = self.snapshot();
        let end = &self.trace.end;
        let text = snap.world.canonical(&describe_compact);
        if text != end.final_state {
            let (want, got) = first_difference(&end.final_state, &text);
            return Err(self.report(DivergenceKind::StateMismatch, want, got));
        }
        let d = snap.state_digest();
        if d != end.state_digest {
            return Err(self.report(
                DivergenceKind::StateMismatch,
                format!("final state digest {:016x}", end.state_digest),
                format!("final state digest {d:016x}"),
            ));
        }
        Ok(())
    }
}

fn first_difference(a: &str, b: &str) -> (String, String) {
    let mut la = a.lines();
    let mut lb = b.lines();
    loop {
        match (la.next(), lb.next()) {
            (Some(x), Some(y)) if x == y => continue,
            (x, y) => {
                return (format!("final state line {:?}", x.unwrap_or("<end>")), format!("{:?}", y.unwrap_or("<end>")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerifyReport {
    pub events: u64,
    pub checkpoints_checked: usize,
    pub events_replayed: u64,
}

/// Replays the trace to the end with full checks, from checkpoint 0 or from
/// every checkpoint.
pub fn verify(trace: &Arc<Trace>, all_checkpoints: bool) -> Result<VerifyReport, ReplayError> {
    let program = trace.compile()?;
    let starts: Vec<usize> = if all_checkpoints { (0..trace.checkpoints.len()).collect() } else { vec![0] };
    let mut report = VerifyReport { events: trace.end.events, ..Default::default() };
    for k in starts {
        let mut r = Replayer::from_checkpoint(trace.clone(), program.clone(), k, InterpConfig::default())?;
        r.machine.interp.set_yield_statements(false);
        r.set_checks(Checks::Full);
        while r.step_event()?.is_some() {
            report.events_replayed += 1;
        }
        r.check_end()?;
        report.checkpoints_checked += 1;
    }
    Ok(report)
}

/// Canonical host and heap text just before event `event` is dispatched, or
/// after the last event for `None`. Restores from the nearest checkpoint.
pub fn canonical_state_at(trace: &Arc<Trace>, event: Option<u64>) -> Result<String, ReplayError> {
    let program = trace.compile()?;
    let target = event.unwrap_or(trace.end.events);
    let k = trace.checkpoints.iter().rposition(|c| c.event_index <= target).ok_or(ReplayError::NoCheckpoint(0))?;
    let mut r = Replayer::from_checkpoint(trace.clone(), program, k, InterpConfig::default())?;
    r.machine.interp.set_yield_statements(false);
    while r.next_event() < target {
        if r.step_event()?.is_none() {
            break;
        }
    }
    if event.is_some() {
        r.settle()?;
    } else {
        while r.step_event()?.is_some() {}
    }
    Ok(r.snapshot().world.canonical(&describe_compact))
}
