//! Guest interpreter and host world wired together: dispatches one event at
//! a time and can stop at statement boundaries.

use std::collections::VecDeque;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::guest::{EventCompletion, GuestError, InterpConfig, Interpreter, Program, StmtId, Value, Yield};
use crate::host::{Callback, DispatchPlan, EventDescriptor, HostWorld, Interposer};

#[derive(Debug, Clone)]
enum Invocation {
    Script(u32),
    Call(Callback, Vec<Value>),
}

#[derive(Debug, Clone)]
struct ActiveEvent {
    index: u64,
    pending: VecDeque<Invocation>,
    running: bool,
    errors: Vec<GuestError>,
    calls: Sha256,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Statement(StmtId),
    EventDone(EventOutcome),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventOutcome {
    pub index: u64,
    pub completion: EventCompletion,
    /// Digest of the event's (interaction, call kind, returned value) sequence.
    pub call_digest: u64,
}

#[derive(Debug, Clone)]
pub struct Machine {
    pub interp: Interpreter,
    pub world: HostWorld,
    event: Option<ActiveEvent>,
}

pub fn digest64(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

impl Machine {
    pub fn new(program: Arc<Program>, world: HostWorld, config: InterpConfig) -> Self {
        Machine { interp: Interpreter::new(program, config), world, event: None }
    }

    pub fn from_parts(interp: Interpreter, world: HostWorld) -> Self {
        Machine { interp, world, event: None }
    }

    pub fn program(&self) -> &Arc<Program> {
        self.interp.program()
    }

    pub fn in_event(&self) -> bool {
        self.event.is_some()
    }

    pub fn current_event(&self) -> Option<u64> {
        self.event.as_ref().map(|e| e.index)
    }

    pub fn begin_event(&mut self, index: u64, d: &EventDescriptor) {
        assert!(self.event.is_none(), "event already in progress");
        self.interp.begin_event();
        let pending = match self.world.begin_dispatch(d, self.interp.heap_mut()) {
            DispatchPlan::Scripts => (0..self.interp.program().scripts.len() as u32).map(Invocation::Script).collect(),
            DispatchPlan::Calls(calls) => calls.into_iter().map(|(c, a)| Invocation::Call(c, a)).collect(),
        };
        self.event = Some(ActiveEvent { index, pending, running: false, errors: Vec::new(), calls: Sha256::new() });
    }

    /// Runs until the next statement start (if the interpreter yields
    /// statements) or the end of the current event.
    pub fn run<I: Interposer>(&mut self, hooks: &mut I) -> Result<Step, I::Error> {
        let ev = self.event.as_mut().expect("no event in progress");
        loop {
            if !ev.running {
                let Some(inv) = ev.pending.pop_front() else {
                    let ev = self.event.take().unwrap();
                    let completion = EventCompletion {
                        statements: self.interp.event_statements(),
                        host_interactions: self.interp.event_host_calls(),
                        errors: ev.errors,
                    };
                    let d = ev.calls.finalize();
                    return Ok(Step::EventDone(EventOutcome {
                        index: ev.index,
                        completion,
                        call_digest: u64::from_le_bytes(d[..8].try_into().unwrap()),
                    }));
                };
                let started = match inv {
                    Invocation::Script(s) => self.interp.invoke_script(s).map_err(|e| e.to_string()),
                    Invocation::Call(Callback::Func(f), args) => {
                        self.interp.invoke(&f, args).map_err(|e| e.to_string())
                    }
                    Invocation::Call(Callback::Global(name), args) => match self.interp.global(&name) {
                        Some(f @ Value::Func(_)) => self.interp.invoke(&f, args).map_err(|e| e.to_string()),
                        _ => Err(format!("listener `{name}` is not a function")),
                    },
                };
                match started {
                    Ok(()) => ev.running = true,
                    Err(message) => {
                        ev.errors.push(GuestError { message, stmt: None });
                        continue;
                    }
                }
            }
            match self.interp.resume() {
                Yield::Statement(s) => return Ok(Step::Statement(s)),
                Yield::HostCall { kind, args } => {
                    let r = self.world.host_call(kind, args, hooks)?;
                    ev.calls.update(self.world.interactions.to_le_bytes());
                    ev.calls.update(kind.name().as_bytes());
                    match &r {
                        Ok(v) => ev.calls.update(format!("={v};").as_bytes()),
                        Err(e) => ev.calls.update(format!("!{e};").as_bytes()),
                    }
                    self.interp.host_return(r);
                }
                Yield::Finished(r) => {
                    ev.running = false;
                    if let Err(e) = r {
                        ev.errors.push(e);
                    }
                }
            }
        }
    }

    /// Runs the current event to completion without stopping at statements.
    pub fn finish_event<I: Interposer>(&mut self, hooks: &mut I) -> Result<EventOutcome, I::Error> {
        loop {
            if let Step::EventDone(o) = self.run(hooks)? {
                return Ok(o);
            }
        }
    }
}
