//! Recording: runs a program against a scenario, writing the nondeterminism
//! log, periodic checkpoints and per-event summaries.

pub mod snapshot;
pub mod tracefile;

use std::convert::Infallible;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::guest::{HostCallKind, InterpConfig, Program, ScriptSource};
use crate::host::{EventDescriptor, HostUpdate, HostWorld, Interposer, Scenario};
use crate::machine::Machine;

pub use snapshot::{capture, describe_compact, Snapshot, SnapshotError};
pub use tracefile::{read_trace, write_trace, TraceFileError, TraceSizes};

pub const DEFAULT_CHECKPOINT_INTERVAL_MS: u64 = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LogEntry {
    /// A value a synchronous host call returned: clock reads and timer ids.
    Simple { interaction: u64, kind: HostCallKind, value: u64 },
    /// An event dispatched at virtual time `at`.
    Event { event_index: u64, seq: u64, at: u64, descriptor: EventDescriptor },
    /// Host changes that happened while no event was running.
    InterEvent { before_event: u64, updates: Vec<HostUpdate> },
    /// Host changes that happened during an event, applied just before the
    /// host call numbered `interaction`.
    Concurrent { interaction: u64, updates: Vec<HostUpdate> },
}

impl LogEntry {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LogEntry::Simple { .. } => "simple",
            LogEntry::Event { .. } => "event",
            LogEntry::InterEvent { .. } => "inter-event",
            LogEntry::Concurrent { .. } => "concurrent",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Index of the next event to dispatch after restoring.
    pub event_index: u64,
    /// Log position to resume reading at.
    pub log_pos: u64,
    pub clock: u64,
    pub interactions: u64,
    pub live_objects: u64,
    /// Encoded [`Snapshot`].
    pub image: Arc<Vec<u8>>,
}

impl Checkpoint {
    pub fn from_snapshot(snap: &Snapshot, event_index: u64, log_pos: u64) -> Checkpoint {
        Checkpoint {
            event_index,
            log_pos,
            clock: snap.world.clock,
            interactions: snap.world.interactions,
            live_objects: snap.objects.len() as u64,
            image: Arc::new(snap.encode()),
        }
    }

    pub fn snapshot(&self) -> Result<Snapshot, SnapshotError> {
        Snapshot::decode(&self.image)
    }
}

/// What recording observed about one event; replay checks against it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSummary {
    pub index: u64,
    pub seq: u64,
    pub at: u64,
    pub statements: u64,
    pub host_calls: u64,
    /// Interaction counter after the event.
    pub interactions_end: u64,
    pub call_digest: u64,
    /// Digest of guest heap and host state after the event.
    pub state_digest: u64,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEnd {
    pub events: u64,
    pub clock: u64,
    pub interactions: u64,
    pub state_digest: u64,
    /// Canonical host state at the end of the run.
    pub final_state: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub program: Vec<ScriptSource>,
    pub scenario_hash: u64,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub log: Vec<LogEntry>,
    pub checkpoints: Vec<Checkpoint>,
    pub summaries: Vec<EventSummary>,
    pub end: TraceEnd,
}

impl Trace {
    pub fn compile(&self) -> Result<Arc<Program>, crate::guest::ProgramError> {
        Program::from_sources(self.program.clone()).map(Arc::new)
    }

    pub fn event_count(&self) -> u64 {
        self.end.events
    }

    /// Log position of each event's `Event` entry.
    pub fn event_positions(&self) -> Vec<usize> {
        self.log.iter().enumerate().filter(|(_, e)| matches!(e, LogEntry::Event { .. })).map(|(i, _)| i).collect()
    }

    pub fn event_entry(&self, index: u64) -> Option<(u64, u64, &EventDescriptor)> {
        self.log.iter().find_map(|e| match e {
            LogEntry::Event { event_index, seq, at, descriptor } if *event_index == index => {
                Some((*seq, *at, descriptor))
            }
            _ => None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RecordOptions {
    /// `None` keeps only the initial checkpoint.
    pub checkpoint_interval: Option<u64>,
    /// Overrides the scenario's scheduler seed.
    pub seed: Option<u64>,
    /// Lets background processes make progress during events.
    pub in_event_ticks: bool,
    pub interp: InterpConfig,
}

impl Default for RecordOptions {
    fn default() -> Self {
        RecordOptions {
            checkpoint_interval: Some(DEFAULT_CHECKPOINT_INTERVAL_MS),
            seed: None,
            in_event_ticks: true,
            interp: InterpConfig::default(),
        }
    }
}

struct Recorder<'a> {
    log: &'a mut Vec<LogEntry>,
    ticks: bool,
}

impl Interposer for Recorder<'_> {
    type Error = Infallible;

    fn before_call(&mut self, world: &mut HostWorld, _: HostCallKind) -> Result<(), Infallible> {
        if self.ticks && world.clock < world.duration && world.scheduler.chance(1, 4) {
            let dt = world.scheduler.range(1, 4).min(world.duration - world.clock);
            let mut updates = world.tick(dt);
            updates.insert(0, HostUpdate::ClockSet { now: world.clock });
            self.log.push(LogEntry::Concurrent { interaction: world.interactions, updates });
        }
        Ok(())
    }

    fn logged(&mut self, world: &HostWorld, kind: HostCallKind, value: u64) -> Result<u64, Infallible> {
        self.log.push(LogEntry::Simple { interaction: world.interactions, kind, value });
        Ok(value)
    }
}

/// Records a full run. Guest errors are part of the recording, not failures.
pub fn record(program: Arc<Program>, scenario: &Scenario, opts: &RecordOptions) -> Trace {
    let mut world = HostWorld::new(scenario);
    let seed = opts.seed.unwrap_or(scenario.seed);
    world.set_scheduler_seed(seed);
    let mut m = Machine::new(program.clone(), world, opts.interp);
    m.interp.set_yield_statements(false);

    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let mut summaries = Vec::new();
    let mut inter: Vec<HostUpdate> = Vec::new();
    let mut next_index = 0u64;
    let interval = opts.checkpoint_interval.filter(|&i| i > 0);
    let mut next_boundary = 0u64;

    loop {
        inter.extend(m.world.flush_pending());
        if m.world.queue.is_empty() && m.world.clock < m.world.duration {
            inter.extend(m.world.advance_world(m.world.duration - m.world.clock));
            continue;
        }
        // Between events: the only points where checkpoints are taken.
        if !inter.is_empty() {
            log.push(LogEntry::InterEvent { before_event: next_index, updates: std::mem::take(&mut inter) });
        }
        if m.world.clock >= next_boundary {
            let snap = capture(&m.interp, &m.world);
            checkpoints.push(Checkpoint::from_snapshot(&snap, next_index, log.len() as u64));
            next_boundary = match interval {
                Some(i) => (m.world.clock / i + 1) * i,
                None => u64::MAX,
            };
        }
        let Some(ev) = m.world.pop_event() else { break };
        let at = m.world.clock;
        log.push(LogEntry::Event { event_index: next_index, seq: ev.seq, at, descriptor: ev.descriptor.clone() });
        m.begin_event(next_index, &ev.descriptor);
        let out = {
            let mut hooks = Recorder { log: &mut log, ticks: opts.in_event_ticks };
            match m.finish_event(&mut hooks) {
                Ok(o) => o,
                Err(never) => match never {},
            }
        };
        let snap = capture(&m.interp, &m.world);
        summaries.push(EventSummary {
            index: next_index,
            seq: ev.seq,
            at,
            statements: out.completion.statements,
            host_calls: out.completion.host_interactions,
            interactions_end: m.world.interactions,
            call_digest: out.call_digest,
            state_digest: snap.state_digest(),
            errors: out.completion.errors.iter().map(|e| e.message.clone()).collect(),
        });
        next_index += 1;
    }
    let snap = capture(&m.interp, &m.world);
    Trace {
        program: program.sources.clone(),
        scenario_hash: scenario.hash(),
        seed,
        checkpoint_interval: interval.unwrap_or(0),
        log,
        checkpoints,
        summaries,
        end: TraceEnd {
            events: next_index,
            clock: m.world.clock,
            interactions: m.world.interactions,
            state_digest: snap.state_digest(),
            final_state: snap.world.canonical(&describe_compact),
        },
    }
}
