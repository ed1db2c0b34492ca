use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::dom::{Callback, DomTree, ExternalResource, Listener, LoadState, NodeId, DOCUMENT_TAG, ROOT, TEXT_TAG};
use super::markup::{self, Token};
use super::prng::Xorshift64Star;
use super::scenario::{InputSpec, ResourceSpec, ResponseSpec, Scalar, Scenario};
use crate::guest::{Heap, HostCallKind, HostRef, Object, Value};

/// Attribute written by animations, as a function of the frame count.
pub const ANIMATION_ATTR: &str = "offset";

pub fn animation_value(frame_count: u64) -> String {
    ((frame_count * 5) % 400).to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReadyState {
    Unsent = 0,
    Opened = 1,
    HeadersReceived = 2,
    Loading = 3,
    Done = 4,
}

impl ReadyState {
    pub fn name(self) -> &'static str {
        match self {
            ReadyState::Unsent => "UNSENT",
            ReadyState::Opened => "OPENED",
            ReadyState::HeadersReceived => "HEADERS_RECEIVED",
            ReadyState::Loading => "LOADING",
            ReadyState::Done => "DONE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timer {
    pub id: u32,
    pub due: u64,
    pub period: Option<u64>,
    pub callback: Value,
    pub args: Vec<Value>,
    /// A fire event is waiting in the queue (recording bookkeeping).
    pub enqueued: bool,
}

/// Arrival schedule of a sent request; only the recording scheduler reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wire {
    pub milestones: Vec<(u64, ReadyState, u64)>,
    pub next: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetRequest {
    pub id: u32,
    pub method: String,
    pub url: String,
    pub state: ReadyState,
    pub status: u32,
    pub received: u64,
    pub response: String,
    pub listeners: Vec<Listener>,
    pub sent: bool,
    pub wire: Option<Wire>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParserStream {
    pub document: NodeId,
    pub name: String,
    pub source: String,
    pub consumed: u64,
    /// Start of the first token not yet complete.
    pub token_start: u64,
    pub open: Vec<NodeId>,
    pub emitted: u64,
    pub chunk: [u64; 2],
}

impl ParserStream {
    pub fn done(&self) -> bool {
        self.consumed as usize >= self.source.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimationState {
    pub node: NodeId,
    pub frame_count: u64,
    pub period: u64,
    pub active: bool,
    pub start: u64,
}

/// A host state change that replay must reproduce from the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HostUpdate {
    ClockSet { now: u64 },
    XhrTransition { request: u32, state: ReadyState, bytes: u64, status: u32 },
    ResourceLoaded { node: NodeId, ok: bool, width: u32, height: u32, bytes: u64 },
    AnimationAdvance { node: NodeId, frame_count: u64 },
    ParseAdvance { document: NodeId, offset: u64, emitted: Vec<NodeId> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventDescriptor {
    /// Runs the program's scripts.
    Load,
    Input {
        kind: String,
        target: NodeId,
        payload: Vec<(String, Scalar)>,
    },
    Timer {
        timer: u32,
    },
    NetStateChange {
        request: u32,
        state: ReadyState,
    },
    ParseProgress {
        document: NodeId,
        offset: u64,
    },
    ResourceLoad {
        node: NodeId,
        ok: bool,
    },
}

impl EventDescriptor {
    pub fn kind_name(&self) -> &'static str {
        match self {
            EventDescriptor::Load => "load",
            EventDescriptor::Input { .. } => "user-input",
            EventDescriptor::Timer { .. } => "timer-fired",
            EventDescriptor::NetStateChange { .. } => "net-state-change",
            EventDescriptor::ParseProgress { .. } => "parse-progress",
            EventDescriptor::ResourceLoad { .. } => "resource-load",
        }
    }

    pub fn describe(&self) -> String {
        match self {
            EventDescriptor::Load => "load".into(),
            EventDescriptor::Input { kind, target, .. } => format!("{kind} on node {target}"),
            EventDescriptor::Timer { timer } => format!("timer {timer}"),
            EventDescriptor::NetStateChange { request, state } => {
                format!("request {request} -> {}", state.name())
            }
            EventDescriptor::ParseProgress { document, offset } => format!("parse node {document} @{offset}"),
            EventDescriptor::ResourceLoad { node, ok } => {
                format!("resource {} on node {node}", if *ok { "load" } else { "error" })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingEvent {
    pub seq: u64,
    pub descriptor: EventDescriptor,
}

/// What dispatching an event runs.
#[derive(Debug, Clone, PartialEq)]
pub enum DispatchPlan {
    Scripts,
    Calls(Vec<(Callback, Vec<Value>)>),
}

/// Record/replay interposition on synchronous host calls.
pub trait Interposer {
    type Error;
    /// Runs after the interaction counter increments, before the effect.
    fn before_call(&mut self, world: &mut HostWorld, kind: HostCallKind) -> Result<(), Self::Error>;
    /// A value that must come from the log on replay (clock reads, timer
    /// ids). Returns the value to use.
    fn logged(&mut self, world: &HostWorld, kind: HostCallKind, value: u64) -> Result<u64, Self::Error>;
}

/// Runs host calls with no interposition.
pub struct Direct;

impl Interposer for Direct {
    type Error = std::convert::Infallible;
    fn before_call(&mut self, _: &mut HostWorld, _: HostCallKind) -> Result<(), Self::Error> {
        Ok(())
    }
    fn logged(&mut self, _: &HostWorld, _: HostCallKind, value: u64) -> Result<u64, Self::Error> {
        Ok(value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Process {
    Timers,
    Inputs,
    Animations,
    Parsers,
    Network,
    Resources,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostWorld {
    pub dom: DomTree,
    pub queue: VecDeque<PendingEvent>,
    pub next_seq: u64,
    pub timers: BTreeMap<u32, Timer>,
    pub next_timer_id: u32,
    pub prng: Xorshift64Star,
    pub clock: u64,
    pub requests: BTreeMap<u32, NetRequest>,
    pub next_request_id: u32,
    pub parsers: Vec<ParserStream>,
    pub animations: BTreeMap<NodeId, AnimationState>,
    pub storage: IndexMap<String, String>,
    pub interactions: u64,
    pub console: Vec<String>,
    pub scheduler: Xorshift64Star,
    pub duration: u64,
    pub inputs: Vec<InputSpec>,
    pub next_input: usize,
    pub dropped_inputs: u64,
    pub network: IndexMap<String, ResponseSpec>,
    pub resources: IndexMap<String, ResourceSpec>,
    pub pending_loads: BTreeMap<NodeId, u64>,
    pub pending_transitions: Vec<HostUpdate>,
}

fn str_arg(args: &[Value], i: usize, what: &str) -> Result<String, String> {
    match args.get(i) {
        Some(Value::Str(s)) => Ok(s.to_string()),
        Some(v) => Ok(v.to_string()).and_then(|s| {
            if matches!(v, Value::Num(_) | Value::Bool(_)) {
                Ok(s)
            } else {
                Err(format!("{what}: expected a string, got {}", v.type_name()))
            }
        }),
        None => Err(format!("{what}: missing argument")),
    }
}

fn num_arg(args: &[Value], i: usize, what: &str) -> Result<f64, String> {
    match args.get(i) {
        Some(Value::Num(n)) => Ok(*n),
        Some(v) => Err(format!("{what}: expected a number, got {}", v.type_name())),
        None => Err(format!("{what}: missing argument")),
    }
}

fn func_arg(args: &[Value], i: usize, what: &str) -> Result<Value, String> {
    match args.get(i) {
        Some(v @ Value::Func(_)) => Ok(v.clone()),
        Some(v) => Err(format!("{what}: expected a function, got {}", v.type_name())),
        None => Err(format!("{what}: missing argument")),
    }
}

impl HostWorld {
    pub fn new(scenario: &Scenario) -> Self {
        let mut w = HostWorld {
            dom: DomTree::new(),
            queue: VecDeque::new(),
            next_seq: 0,
            timers: BTreeMap::new(),
            next_timer_id: 1,
            prng: Xorshift64Star::new(scenario.prng_seed),
            clock: 0,
            requests: BTreeMap::new(),
            next_request_id: 1,
            parsers: Vec::new(),
            animations: BTreeMap::new(),
            storage: IndexMap::new(),
            interactions: 0,
            console: Vec::new(),
            scheduler: Xorshift64Star::new(scenario.seed),
            duration: scenario.duration_ms,
            inputs: scenario.inputs.clone(),
            next_input: 0,
            dropped_inputs: 0,
            network: scenario.network.clone(),
            resources: scenario.resources.clone(),
            pending_loads: BTreeMap::new(),
            pending_transitions: Vec::new(),
        };
        w.inputs.sort_by_key(|i| i.at);
        for d in &scenario.documents {
            let doc = w.dom.create(DOCUMENT_TAG);
            w.dom.get_mut(doc).unwrap().attrs.insert("name".into(), d.name.clone());
            w.dom.append(ROOT, doc).expect("fresh document");
            w.parsers.push(ParserStream {
                document: doc,
                name: d.name.clone(),
                source: d.markup.clone(),
                consumed: 0,
                token_start: 0,
                open: Vec::new(),
                emitted: 0,
                chunk: d.chunk,
            });
            if !d.streamed {
                let idx = w.parsers.len() - 1;
                let end = d.markup.len() as u64;
                w.parse_to(idx, end).expect("validated markup");
            }
        }
        w.enqueue(EventDescriptor::Load);
        w
    }

    /// Reseeds the background scheduler.
    pub fn set_scheduler_seed(&mut self, seed: u64) {
        self.scheduler = Xorshift64Star::new(seed);
    }

    fn enqueue(&mut self, descriptor: EventDescriptor) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push_back(PendingEvent { seq, descriptor });
        seq
    }

    /// Validates the target and appends to the event queue.
    pub fn enqueue_event(&mut self, descriptor: EventDescriptor) -> Result<u64, String> {
        match &descriptor {
            EventDescriptor::Load => {}
            EventDescriptor::Input { target, .. } | EventDescriptor::ResourceLoad { node: target, .. } => {
                if !self.dom.is_connected(*target) {
                    return Err(format!("node {target} is not in the document"));
                }
            }
            EventDescriptor::Timer { timer } => {
                if !self.timers.contains_key(timer) {
                    return Err(format!("unknown timer {timer}"));
                }
            }
            EventDescriptor::NetStateChange { request, .. } => {
                if !self.requests.contains_key(request) {
                    return Err(format!("unknown request {request}"));
                }
            }
            EventDescriptor::ParseProgress { document, .. } => {
                if !self.parsers.iter().any(|p| p.document == *document) {
                    return Err(format!("node {document} is not a document"));
                }
            }
        }
        Ok(self.enqueue(descriptor))
    }

    pub fn pop_event(&mut self) -> Option<PendingEvent> {
        self.queue.pop_front()
    }

    // ---- attributes and side effects ----

    fn set_attr(&mut self, node: NodeId, name: &str, value: String) {
        let Some(n) = self.dom.get_mut(node) else { return };
        n.attrs.insert(name.to_string(), value.clone());
        if let Some(event) = name.strip_prefix("on").filter(|e| !e.is_empty()) {
            let pos = n.listeners.iter().position(|l| l.event == event && matches!(l.callback, Callback::Global(_)));
            match (pos, value.is_empty()) {
                (Some(i), true) => {
                    n.listeners.remove(i);
                }
                (Some(i), false) => n.listeners[i].callback = Callback::Global(value),
                (None, false) => {
                    n.listeners.push(Listener { event: event.to_string(), callback: Callback::Global(value) })
                }
                (None, true) => {}
            }
            return;
        }
        match name {
            "animate" => match value.parse::<u64>() {
                Ok(period) if period > 0 => {
                    self.animations
                        .insert(node, AnimationState { node, frame_count: 0, period, active: true, start: self.clock });
                    n.attrs.insert(ANIMATION_ATTR.into(), animation_value(0));
                }
                _ => {
                    if let Some(a) = self.animations.get_mut(&node) {
                        a.active = false;
                    }
                }
            },
            "src" => {
                n.resource = Some(ExternalResource { url: value.clone(), state: LoadState::Pending });
                let delay = self.resources.get(&value).map(ResourceSpec::delay).unwrap_or(40);
                self.pending_loads.insert(node, self.clock + delay);
            }
            _ => {}
        }
    }

    /// Feeds parser `idx` up to byte `offset`, creating nodes. Returns new node ids.
    fn parse_to(&mut self, idx: usize, offset: u64) -> Result<Vec<NodeId>, String> {
        let p = &self.parsers[idx];
        if offset < p.consumed || offset as usize > p.source.len() {
            return Err(format!("bad parse offset {offset} for document {}", p.name));
        }
        let (tokens, next) =
            markup::scan(&p.source, p.token_start as usize, offset as usize).map_err(|e| e.to_string())?;
        let doc = p.document;
        let mut emitted = Vec::new();
        for t in tokens {
            let parent = self.parsers[idx].open.last().copied().unwrap_or(doc);
            match t {
                Token::Start { name, attrs, self_closing } => {
                    let id = self.dom.create(&name);
                    self.dom.append(parent, id)?;
                    for (k, v) in attrs {
                        self.set_attr(id, &k, v);
                    }
                    if !self_closing {
                        self.parsers[idx].open.push(id);
                    }
                    emitted.push(id);
                }
                Token::End { .. } => {
                    self.parsers[idx].open.pop();
                }
                Token::Text(text) => {
                    let id = self.dom.create(TEXT_TAG);
                    self.dom.append(parent, id)?;
                    self.dom.get_mut(id).unwrap().attrs.insert("value".into(), text);
                    emitted.push(id);
                }
            }
        }
        let p = &mut self.parsers[idx];
        p.consumed = offset;
        p.token_start = next as u64;
        p.emitted += emitted.len() as u64;
        Ok(emitted)
    }

    // ---- updates ----

    /// Applies a logged update. Used by replay and, for identical effects,
    /// by the recording scheduler.
    pub fn apply_update(&mut self, u: &HostUpdate) -> Result<(), String> {
        match u {
            HostUpdate::ClockSet { now } => {
                if *now < self.clock {
                    return Err(format!("clock moved backwards from {} to {now}", self.clock));
                }
                self.clock = *now;
            }
            HostUpdate::XhrTransition { request, state, bytes, status } => {
                let r = self.requests.get_mut(request).ok_or_else(|| format!("unknown request {request}"))?;
                let legal = *state as u8 == r.state as u8 + 1
                    || (*state == ReadyState::Loading && r.state == ReadyState::Loading);
                if !legal || *bytes < r.received || *bytes as usize > r.response.len() {
                    return Err(format!(
                        "illegal transition of request {request}: {} -> {} ({} bytes)",
                        r.state.name(),
                        state.name(),
                        bytes
                    ));
                }
                r.state = *state;
                r.received = *bytes;
                r.status = *status;
            }
            HostUpdate::ResourceLoaded { node, ok, width, height, bytes } => {
                self.pending_loads.remove(node);
                let n = self.dom.get_mut(*node).ok_or_else(|| format!("unknown node {node}"))?;
                let r = n.resource.as_mut().ok_or_else(|| format!("node {node} has no resource"))?;
                if *ok {
                    r.state = LoadState::Loaded { width: *width, height: *height, bytes: *bytes };
                    n.attrs.insert("width".into(), width.to_string());
                    n.attrs.insert("height".into(), height.to_string());
                } else {
                    r.state = LoadState::Failed;
                }
            }
            HostUpdate::AnimationAdvance { node, frame_count } => {
                let a = self.animations.get_mut(node).ok_or_else(|| format!("no animation on node {node}"))?;
                if *frame_count < a.frame_count {
                    return Err(format!("animation on node {node} moved backwards"));
                }
                a.frame_count = *frame_count;
                if let Some(n) = self.dom.get_mut(*node) {
                    n.attrs.insert(ANIMATION_ATTR.into(), animation_value(*frame_count));
                }
            }
            HostUpdate::ParseAdvance { document, offset, emitted } => {
                let idx = self
                    .parsers
                    .iter()
                    .position(|p| p.document == *document)
                    .ok_or_else(|| format!("node {document} is not a document"))?;
                let got = self.parse_to(idx, *offset)?;
                if &got != emitted {
                    return Err(format!("parser emitted {got:?}, log says {emitted:?}"));
                }
            }
        }
        Ok(())
    }

    // ---- background processes (recording only) ----

    /// One scheduler step of `dt` virtual ms. Background processes run in a
    /// seed-chosen order. Returns the state updates (not the enqueues).
    pub fn tick(&mut self, dt: u64) -> Vec<HostUpdate> {
        self.clock += dt;
        let mut order = [
            Process::Timers,
            Process::Inputs,
            Process::Animations,
            Process::Parsers,
            Process::Network,
            Process::Resources,
        ];
        self.scheduler.shuffle(&mut order);
        let mut updates = Vec::new();
        for p in order {
            match p {
                Process::Timers => {
                    let mut due: Vec<(u64, u32)> = self
                        .timers
                        .values()
                        .filter(|t| !t.enqueued && t.due <= self.clock)
                        .map(|t| (t.due, t.id))
                        .collect();
                    due.sort();
                    for (_, id) in due {
                        self.timers.get_mut(&id).unwrap().enqueued = true;
                        self.enqueue(EventDescriptor::Timer { timer: id });
                    }
                }
                Process::Inputs => {
                    while self.next_input < self.inputs.len() && self.inputs[self.next_input].at <= self.clock {
                        let spec = self.inputs[self.next_input].clone();
                        self.next_input += 1;
                        match self.dom.query(&spec.target) {
                            Some(target) => {
                                let d = EventDescriptor::Input {
                                    kind: spec.kind,
                                    target,
                                    payload: spec.payload.into_iter().collect(),
                                };
                                self.enqueue_event(d).expect("connected target");
                            }
                            None => self.dropped_inputs += 1,
                        }
                    }
                }
                Process::Animations => {
                    let advances: Vec<HostUpdate> = self
                        .animations
                        .values()
                        .filter(|a| a.active)
                        .filter_map(|a| {
                            let n = (self.clock - a.start) / a.period;
                            (n > a.frame_count).then_some(HostUpdate::AnimationAdvance { node: a.node, frame_count: n })
                        })
                        .collect();
                    for u in advances {
                        self.apply_update(&u).expect("animation advance");
                        updates.push(u);
                    }
                }
                Process::Parsers => {
                    for idx in 0..self.parsers.len() {
                        if self.parsers[idx].done() {
                            continue;
                        }
                        let [lo, hi] = self.parsers[idx].chunk;
                        let step = self.scheduler.range(lo, hi);
                        let p = &self.parsers[idx];
                        let offset = (p.consumed + step).min(p.source.len() as u64);
                        let document = p.document;
                        let emitted = self.parse_to(idx, offset).expect("validated markup");
                        if !emitted.is_empty() {
                            self.enqueue(EventDescriptor::ParseProgress { document, offset });
                            // New nodes may start loads or animations timed from now.
                            updates.push(HostUpdate::ClockSet { now: self.clock });
                        }
                        updates.push(HostUpdate::ParseAdvance { document, offset, emitted });
                    }
                }
                Process::Network => {
                    for r in self.requests.values_mut() {
                        let Some(w) = r.wire.as_mut() else { continue };
                        while w.next < w.milestones.len() && w.milestones[w.next].0 <= self.clock {
                            let (_, state, bytes) = w.milestones[w.next];
                            w.next += 1;
                            self.pending_transitions.push(HostUpdate::XhrTransition {
                                request: r.id,
                                state,
                                bytes,
                                status: r.status,
                            });
                        }
                    }
                }
                Process::Resources => {
                    let due: Vec<NodeId> =
                        self.pending_loads.iter().filter(|(_, &t)| t <= self.clock).map(|(&n, _)| n).collect();
                    for node in due {
                        let url = self.dom.get(node).and_then(|n| n.resource.as_ref()).map(|r| r.url.clone());
                        let spec = url.and_then(|u| self.resources.get(&u).cloned());
                        let u = match spec {
                            Some(s) if !s.fail => HostUpdate::ResourceLoaded {
                                node,
                                ok: true,
                                width: s.width,
                                height: s.height,
                                bytes: s.bytes,
                            },
                            _ => HostUpdate::ResourceLoaded { node, ok: false, width: 0, height: 0, bytes: 0 },
                        };
                        if self.dom.get(node).is_some_and(|n| n.resource.is_some()) {
                            self.apply_update(&u).expect("resource load");
                            let ok = matches!(u, HostUpdate::ResourceLoaded { ok: true, .. });
                            if self.dom.is_connected(node) {
                                self.enqueue(EventDescriptor::ResourceLoad { node, ok });
                            }
                            updates.push(u);
                        } else {
                            self.pending_loads.remove(&node);
                        }
                    }
                }
            }
        }
        updates
    }

    /// Applies deferred request transitions at a quiescent point, queueing
    /// their state-change events.
    pub fn flush_pending(&mut self) -> Vec<HostUpdate> {
        let pending = std::mem::take(&mut self.pending_transitions);
        for u in &pending {
            self.apply_update(u).expect("legal transition");
            if let HostUpdate::XhrTransition { request, state, .. } = u {
                self.enqueue(EventDescriptor::NetStateChange { request: *request, state: *state });
            }
        }
        pending
    }

    /// Advances the clock by at most `budget` in scheduler-chosen steps of
    /// 1..=16 ms, stopping early once an event is queued or a deferred
    /// change is waiting.
    pub fn advance_world(&mut self, budget: u64) -> Vec<HostUpdate> {
        let end = self.clock + budget;
        let mut updates = Vec::new();
        while self.clock < end && self.queue.is_empty() && self.pending_transitions.is_empty() {
            let dt = self.scheduler.range(1, 16).min(end - self.clock);
            updates.extend(self.tick(dt));
        }
        updates
    }

    /// Whether any background process could still produce an effect.
    pub fn background_idle(&self) -> bool {
        self.timers.is_empty()
            && self.next_input >= self.inputs.len()
            && !self.animations.values().any(|a| a.active)
            && self.parsers.iter().all(ParserStream::done)
            && self.requests.values().all(|r| r.wire.as_ref().is_none_or(|w| w.next >= w.milestones.len()))
            && self.pending_loads.is_empty()
            && self.pending_transitions.is_empty()
    }

    // ---- dispatch ----

    /// Bookkeeping at dispatch time and the callbacks to run.
    pub fn begin_dispatch(&mut self, d: &EventDescriptor, heap: &mut Heap) -> DispatchPlan {
        let event_obj = |heap: &mut Heap, ty: &str, target: Value, extra: Vec<(&str, Value)>| {
            let mut map = IndexMap::new();
            map.insert("type".into(), Value::str(ty));
            map.insert("target".into(), target);
            for (k, v) in extra {
                map.insert(k.into(), v);
            }
            Value::Obj(heap.alloc(Object::Record(map)))
        };
        let listeners_of = |ls: &[Listener], ty: &str| -> Vec<Callback> {
            ls.iter().filter(|l| l.event == ty).map(|l| l.callback.clone()).collect()
        };
        match d {
            EventDescriptor::Load => DispatchPlan::Scripts,
            EventDescriptor::Timer { timer } => {
                let Some(t) = self.timers.get_mut(timer) else {
                    // Cleared after it was queued.
                    return DispatchPlan::Calls(Vec::new());
                };
                t.enqueued = false;
                let call = (Callback::Func(t.callback.clone()), t.args.clone());
                match t.period {
                    Some(p) => t.due += p,
                    None => {
                        self.timers.remove(timer);
                    }
                }
                DispatchPlan::Calls(vec![call])
            }
            EventDescriptor::Input { kind, target, payload } => {
                let cbs = self.dom.get(*target).map(|n| listeners_of(&n.listeners, kind)).unwrap_or_default();
                if cbs.is_empty() {
                    return DispatchPlan::Calls(Vec::new());
                }
                let extra = payload.iter().map(|(k, v)| (k.as_str(), scalar_value(v))).collect();
                let ev = event_obj(heap, kind, Value::Host(HostRef::Node(*target)), extra);
                DispatchPlan::Calls(cbs.into_iter().map(|c| (c, vec![ev.clone()])).collect())
            }
            EventDescriptor::NetStateChange { request, state } => {
                let Some(r) = self.requests.get(request) else { return DispatchPlan::Calls(Vec::new()) };
                let cbs = listeners_of(&r.listeners, "readystatechange");
                if cbs.is_empty() {
                    return DispatchPlan::Calls(Vec::new());
                }
                let extra = vec![("state", Value::Num(*state as u8 as f64)), ("status", Value::Num(r.status as f64))];
                let ev = event_obj(heap, "readystatechange", Value::Host(HostRef::Request(*request)), extra);
                DispatchPlan::Calls(cbs.into_iter().map(|c| (c, vec![ev.clone()])).collect())
            }
            EventDescriptor::ParseProgress { document, offset } => {
                let cbs = self.dom.get(*document).map(|n| listeners_of(&n.listeners, "parse")).unwrap_or_default();
                if cbs.is_empty() {
                    return DispatchPlan::Calls(Vec::new());
                }
                let ev = event_obj(
                    heap,
                    "parse",
                    Value::Host(HostRef::Node(*document)),
                    vec![("offset", Value::Num(*offset as f64))],
                );
                DispatchPlan::Calls(cbs.into_iter().map(|c| (c, vec![ev.clone()])).collect())
            }
            EventDescriptor::ResourceLoad { node, ok } => {
                let ty = if *ok { "load" } else { "error" };
                let cbs = self.dom.get(*node).map(|n| listeners_of(&n.listeners, ty)).unwrap_or_default();
                if cbs.is_empty() {
                    return DispatchPlan::Calls(Vec::new());
                }
                let ev = event_obj(heap, ty, Value::Host(HostRef::Node(*node)), vec![]);
                DispatchPlan::Calls(cbs.into_iter().map(|c| (c, vec![ev.clone()])).collect())
            }
        }
    }

    // ---- host calls ----

    fn node(&self, args: &[Value], i: usize, what: &str) -> Result<NodeId, String> {
        match args.get(i) {
            Some(Value::Host(HostRef::Node(n))) if self.dom.get(*n).is_some() => Ok(*n),
            Some(Value::Host(HostRef::Node(n))) => Err(format!("{what}: unknown node {n}")),
            Some(v) => Err(format!("{what}: expected a node, got {}", v.type_name())),
            None => Err(format!("{what}: missing argument")),
        }
    }

    fn request(&self, args: &[Value], i: usize, what: &str) -> Result<u32, String> {
        match args.get(i) {
            Some(Value::Host(HostRef::Request(r))) if self.requests.contains_key(r) => Ok(*r),
            Some(Value::Host(HostRef::Request(r))) => Err(format!("{what}: unknown request {r}")),
            Some(v) => Err(format!("{what}: expected a request, got {}", v.type_name())),
            None => Err(format!("{what}: missing argument")),
        }
    }

    fn listeners_mut(&mut self, target: &Value, what: &str) -> Result<&mut Vec<Listener>, String> {
        match target {
            Value::Host(HostRef::Node(n)) => {
                self.dom.get_mut(*n).map(|n| &mut n.listeners).ok_or_else(|| format!("{what}: unknown node {n}"))
            }
            Value::Host(HostRef::Request(r)) => {
                self.requests.get_mut(r).map(|r| &mut r.listeners).ok_or_else(|| format!("{what}: unknown request {r}"))
            }
            v => Err(format!("{what}: expected a node or request, got {}", v.type_name())),
        }
    }

    /// One synchronous guest-to-host interaction. The outer error is an
    /// interposer failure; the inner one a guest-visible error.
    pub fn host_call<I: Interposer>(
        &mut self,
        kind: HostCallKind,
        args: Vec<Value>,
        hooks: &mut I,
    ) -> Result<Result<Value, String>, I::Error> {
        self.interactions += 1;
        hooks.before_call(self, kind)?;
        let what = kind.name();
        let r = match kind {
            HostCallKind::DateNow => {
                let v = hooks.logged(self, kind, self.clock)?;
                Ok(Value::Num(v as f64))
            }
            HostCallKind::SetTimeout | HostCallKind::SetInterval => {
                let parsed = func_arg(&args, 0, what).and_then(|f| {
                    let ms = num_arg(&args, 1, what)?;
                    if !(ms >= 0.0 && ms.is_finite()) {
                        return Err(format!("{what}: bad delay"));
                    }
                    Ok((f, ms as u64))
                });
                match parsed {
                    Err(e) => Err(e),
                    Ok((f, ms)) => {
                        let id = hooks.logged(self, kind, self.next_timer_id as u64)? as u32;
                        self.next_timer_id = self.next_timer_id.max(id + 1);
                        let period = (kind == HostCallKind::SetInterval).then_some(ms.max(1));
                        let due = self.clock + period.unwrap_or(ms);
                        let extra = args.get(2..).map(<[Value]>::to_vec).unwrap_or_default();
                        self.timers.insert(id, Timer { id, due, period, callback: f, args: extra, enqueued: false });
                        Ok(Value::Num(id as f64))
                    }
                }
            }
            _ => self.plain_call(kind, &args),
        };
        Ok(r)
    }

    fn plain_call(&mut self, kind: HostCallKind, args: &[Value]) -> Result<Value, String> {
        let what = kind.name();
        match kind {
            HostCallKind::Random => Ok(Value::Num(self.prng.next_f64())),
            HostCallKind::ClearTimer => {
                let id = num_arg(args, 0, what)?;
                Ok(Value::Bool(self.timers.remove(&(id as u32)).is_some()))
            }
            HostCallKind::CreateElement => {
                let tag = str_arg(args, 0, what)?;
                if tag.is_empty() || tag.starts_with('#') {
                    return Err(format!("{what}: bad tag name"));
                }
                Ok(Value::Host(HostRef::Node(self.dom.create(&tag))))
            }
            HostCallKind::AppendChild => {
                let p = self.node(args, 0, what)?;
                let c = self.node(args, 1, what)?;
                self.dom.append(p, c).map_err(|e| format!("{what}: {e}"))?;
                Ok(args[1].clone())
            }
            HostCallKind::RemoveChild => {
                let p = self.node(args, 0, what)?;
                let c = self.node(args, 1, what)?;
                self.dom.remove(p, c).map_err(|e| format!("{what}: {e}"))?;
                Ok(args[1].clone())
            }
            HostCallKind::SetAttribute => {
                let n = self.node(args, 0, what)?;
                let name = str_arg(args, 1, what)?;
                let value = args.get(2).map(Value::to_string).unwrap_or_default();
                self.set_attr(n, &name, value);
                Ok(Value::Null)
            }
            HostCallKind::GetAttribute => {
                let n = self.node(args, 0, what)?;
                let name = str_arg(args, 1, what)?;
                Ok(self.dom.get(n).unwrap().attrs.get(&name).map(|v| Value::str(v.as_str())).unwrap_or(Value::Null))
            }
            HostCallKind::QueryNode => {
                let sel = str_arg(args, 0, what)?;
                Ok(self.dom.query(&sel).map(|n| Value::Host(HostRef::Node(n))).unwrap_or(Value::Null))
            }
            HostCallKind::AddEventListener => {
                let ty = str_arg(args, 1, what)?;
                let f = func_arg(args, 2, what)?;
                let target = args.first().cloned().unwrap_or(Value::Null);
                self.listeners_mut(&target, what)?.push(Listener { event: ty, callback: Callback::Func(f) });
                Ok(Value::Null)
            }
            HostCallKind::RemoveEventListener => {
                let ty = str_arg(args, 1, what)?;
                let f = func_arg(args, 2, what)?;
                let target = args.first().cloned().unwrap_or(Value::Null);
                let ls = self.listeners_mut(&target, what)?;
                let pos = ls.iter().position(|l| l.event == ty && l.callback == Callback::Func(f.clone()));
                if let Some(i) = pos {
                    ls.remove(i);
                }
                Ok(Value::Bool(pos.is_some()))
            }
            HostCallKind::XhrOpen => {
                let method = str_arg(args, 0, what)?;
                let url = str_arg(args, 1, what)?;
                let id = self.next_request_id;
                self.next_request_id += 1;
                self.requests.insert(
                    id,
                    NetRequest {
                        id,
                        method,
                        url,
                        state: ReadyState::Opened,
                        status: 0,
                        received: 0,
                        response: String::new(),
                        listeners: Vec::new(),
                        sent: false,
                        wire: None,
                    },
                );
                Ok(Value::Host(HostRef::Request(id)))
            }
            HostCallKind::XhrSend => {
                let id = self.request(args, 0, what)?;
                let now = self.clock;
                let spec = self.network.get(&self.requests[&id].url).cloned();
                let r = self.requests.get_mut(&id).unwrap();
                if r.sent {
                    return Err(format!("{what}: request {id} already sent"));
                }
                r.sent = true;
                let spec = spec.unwrap_or(ResponseSpec {
                    status: 404,
                    body: String::new(),
                    headers_ms: 10,
                    chunks: Vec::new(),
                });
                r.status = spec.status;
                r.response = spec.body.clone();
                let total = spec.body.len() as u64;
                let mut m = vec![(now + spec.headers_ms, ReadyState::HeadersReceived, 0)];
                let chunks = if spec.chunks.is_empty() {
                    vec![(spec.headers_ms + 30, total)]
                } else {
                    let mut acc = 0;
                    spec.chunks
                        .iter()
                        .map(|c| {
                            acc = (acc + c.bytes).min(total);
                            (c.after_ms.max(spec.headers_ms), acc)
                        })
                        .collect()
                };
                let mut last = now + spec.headers_ms;
                for (after, bytes) in chunks {
                    last = last.max(now + after);
                    m.push((last, ReadyState::Loading, bytes));
                }
                if m.last().map(|x| x.2) != Some(total) {
                    m.push((last, ReadyState::Loading, total));
                }
                m.push((last, ReadyState::Done, total));
                r.wire = Some(Wire { milestones: m, next: 0 });
                Ok(Value::Null)
            }
            HostCallKind::XhrStatus => {
                let id = self.request(args, 0, what)?;
                Ok(Value::Num(self.requests[&id].state as u8 as f64))
            }
            HostCallKind::XhrResponse => {
                let id = self.request(args, 0, what)?;
                let r = &self.requests[&id];
                let text: String = r.response.bytes().take(r.received as usize).map(char::from).collect();
                Ok(Value::str(text))
            }
            HostCallKind::StorageGet => {
                let k = str_arg(args, 0, what)?;
                Ok(self.storage.get(&k).map(|v| Value::str(v.as_str())).unwrap_or(Value::Null))
            }
            HostCallKind::StorageSet => {
                let k = str_arg(args, 0, what)?;
                let v = args.get(1).map(Value::to_string).unwrap_or_default();
                self.storage.insert(k, v);
                Ok(Value::Null)
            }
            HostCallKind::StorageRemove => {
                let k = str_arg(args, 0, what)?;
                Ok(Value::Bool(self.storage.shift_remove(&k).is_some()))
            }
            HostCallKind::ConsoleLog => {
                let line: Vec<String> = args.iter().map(Value::to_string).collect();
                self.console.push(line.join(" "));
                Ok(Value::Null)
            }
            HostCallKind::DateNow | HostCallKind::SetTimeout | HostCallKind::SetInterval => {
                unreachable!("handled with interposition")
            }
        }
    }

    // ---- references, images, canonical text ----

    /// Every guest value the world retains, in a fixed order.
    pub fn for_each_value_mut(&mut self, f: &mut dyn FnMut(&mut Value)) {
        for t in self.timers.values_mut() {
            f(&mut t.callback);
            t.args.iter_mut().for_each(&mut *f);
        }
        for n in self.dom.nodes_mut() {
            for l in &mut n.listeners {
                if let Callback::Func(v) = &mut l.callback {
                    f(v);
                }
            }
        }
        for r in self.requests.values_mut() {
            for l in &mut r.listeners {
                if let Callback::Func(v) = &mut l.callback {
                    f(v);
                }
            }
        }
    }

    /// Deterministic text of all observable host state. Omits recording-only
    /// scheduler bookkeeping (event queue, scheduler seed, wire progress,
    /// deferred transitions).
    pub fn canonical(&self, describe: &dyn Fn(&Value) -> String) -> String {
        let cb = |c: &Callback| match c {
            Callback::Func(v) => describe(v),
            Callback::Global(name) => format!("@{name}"),
        };
        let mut out = String::new();
        let _ = writeln!(out, "clock {}", self.clock);
        let _ = writeln!(out, "interactions {}", self.interactions);
        let _ = writeln!(out, "prng {:016x}", self.prng.state());
        out.push_str("dom\n");
        out.push_str(&self.dom.render(&cb));
        out.push_str("timers\n");
        for t in self.timers.values() {
            let args: Vec<String> = t.args.iter().map(describe).collect();
            let _ = writeln!(
                out,
                "  {} due={} period={} cb={} args=[{}]",
                t.id,
                t.due,
                t.period.map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
                describe(&t.callback),
                args.join(",")
            );
        }
        out.push_str("requests\n");
        for r in self.requests.values() {
            let ls: Vec<String> = r.listeners.iter().map(|l| format!("{}:{}", l.event, cb(&l.callback))).collect();
            let _ = writeln!(
                out,
                "  {} {} {} {} status={} received={}/{} [{}]",
                r.id,
                r.method,
                r.url,
                r.state.name(),
                r.status,
                r.received,
                r.response.len(),
                ls.join(",")
            );
        }
        out.push_str("parsers\n");
        for p in &self.parsers {
            let _ = writeln!(out, "  {} node={} offset={}/{}", p.name, p.document, p.consumed, p.source.len());
        }
        out.push_str("animations\n");
        for a in self.animations.values() {
            let _ = writeln!(
                out,
                "  node={} frame={} period={} start={} active={}",
                a.node, a.frame_count, a.period, a.start, a.active
            );
        }
        out.push_str("loads\n");
        for (n, due) in &self.pending_loads {
            let _ = writeln!(out, "  node={n} due={due}");
        }
        out.push_str("storage\n");
        for (k, v) in &self.storage {
            let _ = writeln!(out, "  {k:?}={v:?}");
        }
        out.push_str("console\n");
        for line in &self.console {
            let _ = writeln!(out, "  {line}");
        }
        out
    }
}

pub fn scalar_value(s: &Scalar) -> Value {
    match s {
        Scalar::Num(n) => Value::Num(*n),
        Scalar::Str(v) => Value::str(v.as_str()),
        Scalar::Bool(b) => Value::Bool(*b),
        Scalar::Null => Value::Null,
    }
}
