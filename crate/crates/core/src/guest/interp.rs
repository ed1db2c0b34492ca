//! Bytecode interpreter with explicit frames.
//!
//! Execution is driven by [`Interpreter::resume`], which runs until the next
//! host call, the end of the current invocation, or (when
//! `yield_statements` is set) the start of the next statement. Statement
//! starts are announced before they execute, so a paused interpreter sits
//! *at* a statement, never in the middle of one.

use std::collections::HashMap;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::{BinOp, HostCallKind, Intrinsic, UnOp};
use super::compile::Op;
use super::value::{format_number, Heap, ObjId, Object, Value};
use super::{FunctionId, LogicalTime, Program, SourceLocation, StmtId};

/// Answers the host calls a running callback makes.
pub type HostFn<'a> = dyn FnMut(&mut Heap, HostCallKind, Vec<Value>) -> Result<Value, String> + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterpConfig {
    /// Maximum statements per event before the event is declared runaway.
    pub statement_budget: u64,
    pub max_depth: usize,
    /// Yield [`Yield::Statement`] at every statement start.
    pub yield_statements: bool,
}

impl Default for InterpConfig {
    fn default() -> Self {
        InterpConfig { statement_budget: 10_000_000, max_depth: 256, yield_statements: false }
    }
}

/// How control arrived at a block entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    Normal,
    /// Loop header to loop body; increments the frame's back-jump count.
    LoopEntry,
    CallEntry,
    ListenerStart,
}

/// One dynamic execution of a statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StmtInstance {
    pub stmt: StmtId,
    pub time: LogicalTime,
    /// Frame serial, unique within an event.
    pub frame: u64,
}

/// The last transfer into a block-entry statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchRecord {
    /// Statement executed just before the transfer; `None` at the start of an event.
    pub source: Option<StmtInstance>,
    pub edge: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{message}")]
pub struct GuestError {
    pub message: String,
    pub stmt: Option<StmtId>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpError {
    #[error("an invocation is already running")]
    Busy,
    #[error("value of type {0} is not callable")]
    NotCallable(&'static str),
    #[error("monitors are disabled")]
    MonitorsDisabled,
    #[error("interpreter is not paused at a statement")]
    NotPaused,
}

/// Result of running one event's callbacks to completion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventCompletion {
    pub statements: u64,
    pub host_interactions: u64,
    pub errors: Vec<GuestError>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Yield {
    Statement(StmtId),
    HostCall {
        kind: HostCallKind,
        args: Vec<Value>,
    },
    /// The current invocation finished; the stack is empty again.
    Finished(Result<Value, GuestError>),
}

#[derive(Debug, Clone)]
struct Frame {
    func: FunctionId,
    pc: u32,
    env: ObjId,
    base: usize,
    serial: u64,
    time: LogicalTime,
    stmt: Option<StmtId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameView {
    pub func: FunctionId,
    pub name: Arc<str>,
    pub stmt: Option<StmtId>,
    pub time: LogicalTime,
    pub serial: u64,
    pub env: ObjId,
}

#[derive(Debug, Clone)]
pub struct Interpreter {
    program: Arc<Program>,
    config: InterpConfig,
    heap: Heap,
    global: ObjId,
    frames: Vec<Frame>,
    stack: Vec<Value>,
    /// Paused at an announced statement marker.
    at_marker: bool,
    awaiting_host: bool,
    pending_error: Option<String>,
    monitors: bool,
    call_counts: Vec<u64>,
    bts: HashMap<StmtId, BranchRecord>,
    last_stmt: Option<StmtInstance>,
    next_edge: EdgeKind,
    next_serial: u64,
    event_statements: u64,
    event_host_calls: u64,
}

impl Interpreter {
    pub fn new(program: Arc<Program>, config: InterpConfig) -> Self {
        let mut heap = Heap::new();
        let global = heap.alloc(Object::Env { vars: IndexMap::new(), parent: None });
        Self::with_heap(program, config, heap, global)
    }

    /// Rebuilds an idle interpreter around a restored heap.
    pub fn with_heap(program: Arc<Program>, config: InterpConfig, heap: Heap, global: ObjId) -> Self {
        let n = program.functions.len();
        Interpreter {
            program,
            config,
            heap,
            global,
            frames: Vec::new(),
            stack: Vec::new(),
            at_marker: false,
            awaiting_host: false,
            pending_error: None,
            monitors: false,
            call_counts: vec![0; n],
            bts: HashMap::new(),
            last_stmt: None,
            next_edge: EdgeKind::ListenerStart,
            next_serial: 1,
            event_statements: 0,
            event_host_calls: 0,
        }
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    pub fn config(&self) -> InterpConfig {
        self.config
    }

    pub fn set_yield_statements(&mut self, on: bool) {
        self.config.yield_statements = on;
    }

    pub fn heap(&self) -> &Heap {
        &self.heap
    }

    pub fn heap_mut(&mut self) -> &mut Heap {
        &mut self.heap
    }

    pub fn global_env(&self) -> ObjId {
        self.global
    }

    pub fn global(&self, name: &str) -> Option<Value> {
        match self.heap.get(self.global) {
            Object::Env { vars, .. } => vars.get(name).cloned(),
            _ => None,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    pub fn monitors_enabled(&self) -> bool {
        self.monitors
    }

    /// Turns monitors on and resets call counters and the branch trace store.
    pub fn enable_monitors(&mut self) {
        self.monitors = true;
        self.reset_monitor_state();
    }

    pub fn disable_monitors(&mut self) {
        self.monitors = false;
        self.reset_monitor_state();
    }

    fn reset_monitor_state(&mut self) {
        self.call_counts.iter_mut().for_each(|c| *c = 0);
        self.bts.clear();
        self.last_stmt = None;
        for f in &mut self.frames {
            f.time = LogicalTime::default();
        }
    }

    /// Resets per-event counters. Logical time restarts with every event.
    pub fn begin_event(&mut self) {
        debug_assert!(self.frames.is_empty());
        self.reset_monitor_state();
        self.next_serial = 1;
        self.next_edge = EdgeKind::ListenerStart;
        self.event_statements = 0;
        self.event_host_calls = 0;
    }

    pub fn event_statements(&self) -> u64 {
        self.event_statements
    }

    pub fn event_host_calls(&self) -> u64 {
        self.event_host_calls
    }

    pub fn branch_trace_store(&self) -> &HashMap<StmtId, BranchRecord> {
        &self.bts
    }

    pub fn branch_record(&self, stmt: StmtId) -> Option<BranchRecord> {
        self.bts.get(&stmt).copied()
    }

    /// Logical times of all live frames, outermost first.
    pub fn timestamp_store(&self) -> Vec<LogicalTime> {
        if !self.monitors {
            return Vec::new();
        }
        self.frames.iter().map(|f| f.time).collect()
    }

    pub fn call_count(&self, f: FunctionId) -> u64 {
        self.call_counts[f as usize]
    }

    pub fn last_statement(&self) -> Option<StmtInstance> {
        self.last_stmt
    }

    pub fn paused_at_statement(&self) -> bool {
        self.at_marker
    }

    /// The statement instance the interpreter is paused at.
    pub fn current_instance(&self) -> Result<StmtInstance, InterpError> {
        if !self.monitors {
            return Err(InterpError::MonitorsDisabled);
        }
        if !self.at_marker {
            return Err(InterpError::NotPaused);
        }
        let f = self.frames.last().ok_or(InterpError::NotPaused)?;
        Ok(StmtInstance { stmt: f.stmt.expect("announced"), time: f.time, frame: f.serial })
    }

    pub fn current_location(&self) -> Result<(SourceLocation, LogicalTime), InterpError> {
        let inst = self.current_instance()?;
        Ok((self.program.stmt(inst.stmt).loc, inst.time))
    }

    pub fn frames(&self) -> Vec<FrameView> {
        self.frames
            .iter()
            .map(|f| FrameView {
                func: f.func,
                name: self.program.function(f.func).name.clone(),
                stmt: f.stmt,
                time: f.time,
                serial: f.serial,
                env: f.env,
            })
            .collect()
    }

    /// Calls a function value as the root of a new invocation.
    pub fn invoke(&mut self, callee: &Value, args: Vec<Value>) -> Result<(), InterpError> {
        if !self.frames.is_empty() {
            return Err(InterpError::Busy);
        }
        let Value::Func(obj) = callee else {
            return Err(InterpError::NotCallable(callee.type_name()));
        };
        let Object::Closure { func, env } = *self.heap.get(*obj) else {
            return Err(InterpError::NotCallable("object"));
        };
        self.stack.clear();
        self.next_edge = EdgeKind::ListenerStart;
        self.push_frame(func, env, args).map_err(|_| InterpError::Busy)?;
        Ok(())
    }

    /// Starts running a script body in the global scope.
    pub fn invoke_script(&mut self, script: u32) -> Result<(), InterpError> {
        if !self.frames.is_empty() {
            return Err(InterpError::Busy);
        }
        let body = self.program.scripts[script as usize].body;
        let global = self.global;
        for (name, fid) in self.program.function(body).decls.clone() {
            let clo = self.heap.alloc(Object::Closure { func: fid, env: global });
            self.define(global, name, Value::Func(clo));
        }
        self.stack.clear();
        self.next_edge = EdgeKind::ListenerStart;
        let serial = self.take_serial();
        let time = self.count_call(body);
        self.frames.push(Frame { func: body, pc: 0, env: global, base: 0, serial, time, stmt: None });
        Ok(())
    }

    /// Supplies the result of the host call the interpreter yielded.
    pub fn host_return(&mut self, result: Result<Value, String>) {
        debug_assert!(self.awaiting_host);
        self.awaiting_host = false;
        match result {
            Ok(v) => self.stack.push(v),
            Err(msg) => {
                // Surfaced on the next resume.
                self.stack.push(Value::Null);
                self.pending_error = Some(msg);
            }
        }
    }

    fn take_serial(&mut self) -> u64 {
        let s = self.next_serial;
        self.next_serial += 1;
        s
    }

    fn count_call(&mut self, f: FunctionId) -> LogicalTime {
        if self.monitors {
            self.call_counts[f as usize] += 1;
            LogicalTime::new(self.call_counts[f as usize], 0)
        } else {
            LogicalTime::default()
        }
    }

    fn push_frame(&mut self, func: FunctionId, closure_env: ObjId, mut args: Vec<Value>) -> Result<(), String> {
        if self.frames.len() >= self.config.max_depth {
            return Err("maximum call depth exceeded".into());
        }
        let prog = Arc::clone(&self.program);
        let def = prog.function(func);
        args.resize(def.params.len().max(args.len()), Value::Null);
        let mut vars = IndexMap::new();
        for (p, a) in def.params.iter().zip(args) {
            vars.insert(p.clone(), a);
        }
        let env = self.heap.alloc(Object::Env { vars, parent: Some(closure_env) });
        for (name, fid) in &def.decls {
            let clo = self.heap.alloc(Object::Closure { func: *fid, env });
            self.define(env, name.clone(), Value::Func(clo));
        }
        let serial = self.take_serial();
        let time = self.count_call(func);
        let base = self.stack.len();
        self.frames.push(Frame { func, pc: 0, env, base, serial, time, stmt: None });
        Ok(())
    }

    fn define(&mut self, env: ObjId, name: Arc<str>, v: Value) {
        if let Object::Env { vars, .. } = self.heap.get_mut(env) {
            vars.insert(name, v);
        }
    }

    fn lookup(&self, mut env: ObjId, name: &str) -> Option<Value> {
        loop {
            match self.heap.get(env) {
                Object::Env { vars, parent } => {
                    if let Some(v) = vars.get(name) {
                        return Some(v.clone());
                    }
                    env = (*parent)?;
                }
                _ => return None,
            }
        }
    }

    fn assign(&mut self, mut env: ObjId, name: &Arc<str>, v: Value) {
        loop {
            let next = match self.heap.get(env) {
                Object::Env { vars, parent } => {
                    if vars.contains_key(name) {
                        break;
                    }
                    *parent
                }
                _ => None,
            };
            match next {
                Some(p) => env = p,
                None => {
                    // Undeclared assignment creates a global.
                    env = self.global;
                    break;
                }
            }
        }
        self.define(env, name.clone(), v);
    }

    fn fail(&mut self, message: impl Into<String>) -> Yield {
        let stmt = self.frames.last().and_then(|f| f.stmt);
        self.frames.clear();
        self.stack.clear();
        self.at_marker = false;
        self.awaiting_host = false;
        self.pending_error = None;
        Yield::Finished(Err(GuestError { message: message.into(), stmt }))
    }

    /// Runs until the next yield point.
    pub fn resume(&mut self) -> Yield {
        assert!(!self.awaiting_host, "host call result not supplied");
        if let Some(msg) = self.pending_error.take() {
            return self.fail(msg);
        }
        let prog = Arc::clone(&self.program);
        loop {
            let Some(fi) = self.frames.len().checked_sub(1) else {
                return Yield::Finished(Ok(Value::Null));
            };
            let func = prog.function(self.frames[fi].func);
            let pc = self.frames[fi].pc as usize;
            match &func.code[pc] {
                Op::Stmt(id) => {
                    let id = *id;
                    if !self.at_marker {
                        if self.monitors && prog.stmt(id).is_block_entry() {
                            self.bts.insert(id, BranchRecord { source: self.last_stmt, edge: self.next_edge });
                        }
                        self.frames[fi].stmt = Some(id);
                        if self.config.yield_statements {
                            self.at_marker = true;
                            return Yield::Statement(id);
                        }
                    }
                    self.at_marker = false;
                    if self.monitors {
                        let f = &self.frames[fi];
                        self.last_stmt = Some(StmtInstance { stmt: id, time: f.time, frame: f.serial });
                    }
                    self.event_statements += 1;
                    if self.event_statements > self.config.statement_budget {
                        return self.fail(format!("statement budget of {} exceeded", self.config.statement_budget));
                    }
                    self.frames[fi].pc += 1;
                }
                Op::Num(n) => self.step_push(fi, Value::Num(*n)),
                Op::Str(s) => self.step_push(fi, Value::Str(s.clone())),
                Op::Bool(b) => self.step_push(fi, Value::Bool(*b)),
                Op::Null => self.step_push(fi, Value::Null),
                Op::Load(name) => match self.lookup(self.frames[fi].env, name) {
                    Some(v) => self.step_push(fi, v),
                    None => return self.fail(format!("`{name}` is not defined")),
                },
                Op::Define(name) => {
                    let v = self.pop();
                    let env = self.frames[fi].env;
                    self.define(env, name.clone(), v);
                    self.frames[fi].pc += 1;
                }
                Op::Store(name) => {
                    let v = self.pop();
                    let env = self.frames[fi].env;
                    self.assign(env, name, v);
                    self.frames[fi].pc += 1;
                }
                Op::MakeObject(keys) => {
                    let vals = self.stack.split_off(self.stack.len() - keys.len());
                    let map: IndexMap<Arc<str>, Value> = keys.iter().cloned().zip(vals).collect();
                    let o = self.heap.alloc(Object::Record(map));
                    self.step_push(fi, Value::Obj(o));
                }
                Op::MakeArray(n) => {
                    let vals = self.stack.split_off(self.stack.len() - *n as usize);
                    let o = self.heap.alloc(Object::Array(vals));
                    self.step_push(fi, Value::Obj(o));
                }
                Op::MakeClosure(id) => {
                    let env = self.frames[fi].env;
                    let o = self.heap.alloc(Object::Closure { func: *id, env });
                    self.step_push(fi, Value::Func(o));
                }
                Op::GetMember(key) => {
                    let o = self.pop();
                    match self.get_member(&o, key) {
                        Ok(v) => self.step_push(fi, v),
                        Err(e) => return self.fail(e),
                    }
                }
                Op::SetMember(key) => {
                    let v = self.pop();
                    let o = self.pop();
                    match o {
                        Value::Obj(id) => match self.heap.get_mut(id) {
                            Object::Record(map) => {
                                map.insert(key.clone(), v);
                            }
                            _ => return self.fail(format!("cannot set property `{key}` of an array")),
                        },
                        other => return self.fail(format!("cannot set property `{key}` of {}", other.type_name())),
                    }
                    self.frames[fi].pc += 1;
                }
                Op::GetIndex => {
                    let i = self.pop();
                    let o = self.pop();
                    match self.get_index(&o, &i) {
                        Ok(v) => self.step_push(fi, v),
                        Err(e) => return self.fail(e),
                    }
                }
                Op::SetIndex => {
                    let v = self.pop();
                    let i = self.pop();
                    let o = self.pop();
                    if let Err(e) = self.set_index(&o, &i, v) {
                        return self.fail(e);
                    }
                    self.frames[fi].pc += 1;
                }
                Op::Unary(op) => {
                    let a = self.pop();
                    let r = match op {
                        UnOp::Not => Value::Bool(!a.truthy()),
                        UnOp::Neg => match a {
                            Value::Num(n) => Value::Num(-n),
                            other => return self.fail(format!("cannot negate {}", other.type_name())),
                        },
                    };
                    self.step_push(fi, r);
                }
                Op::Binary(op) => {
                    let b = self.pop();
                    let a = self.pop();
                    match binary(*op, &a, &b) {
                        Ok(v) => self.step_push(fi, v),
                        Err(e) => return self.fail(e),
                    }
                }
                Op::AndJump(t) | Op::OrJump(t) => {
                    let truthy = self.stack.last().expect("operand").truthy();
                    let jump = if matches!(func.code[pc], Op::AndJump(_)) { !truthy } else { truthy };
                    if jump {
                        self.frames[fi].pc = *t;
                    } else {
                        self.stack.pop();
                        self.frames[fi].pc += 1;
                    }
                }
                Op::Pop => {
                    self.stack.pop();
                    self.frames[fi].pc += 1;
                }
                Op::Call(argc) => {
                    let args = self.stack.split_off(self.stack.len() - *argc as usize);
                    let callee = self.pop();
                    self.frames[fi].pc += 1;
                    let target = match &callee {
                        Value::Func(o) => match self.heap.get(*o) {
                            Object::Closure { func, env } => Some((*func, *env)),
                            _ => None,
                        },
                        _ => None,
                    };
                    let Some((f, env)) = target else {
                        return self.fail(format!("{} is not a function", callee.type_name()));
                    };
                    self.next_edge = EdgeKind::CallEntry;
                    if let Err(e) = self.push_frame(f, env, args) {
                        return self.fail(e);
                    }
                }
                Op::Host(kind, argc) => {
                    let args = self.stack.split_off(self.stack.len() - *argc as usize);
                    self.frames[fi].pc += 1;
                    self.awaiting_host = true;
                    self.event_host_calls += 1;
                    return Yield::HostCall { kind: *kind, args };
                }
                Op::Intrinsic(op, argc) => {
                    let args = self.stack.split_off(self.stack.len() - *argc as usize);
                    match self.intrinsic(*op, args) {
                        Ok(v) => self.step_push(fi, v),
                        Err(e) => return self.fail(e),
                    }
                }
                Op::Goto(t) => {
                    self.frames[fi].pc = *t;
                    self.next_edge = EdgeKind::Normal;
                }
                Op::Branch { then, otherwise, loop_header } => {
                    let c = self.pop().truthy();
                    let f = &mut self.frames[fi];
                    if c {
                        f.pc = *then;
                        if *loop_header {
                            self.next_edge = EdgeKind::LoopEntry;
                            if self.monitors {
                                f.time.back_jumps += 1;
                            }
                        } else {
                            self.next_edge = EdgeKind::Normal;
                        }
                    } else {
                        f.pc = *otherwise;
                        self.next_edge = EdgeKind::Normal;
                    }
                }
                Op::Return | Op::ReturnNull => {
                    let v = if matches!(func.code[pc], Op::Return) { self.pop() } else { Value::Null };
                    let frame = self.frames.pop().expect("frame");
                    self.stack.truncate(frame.base);
                    if self.frames.is_empty() {
                        self.stack.clear();
                        return Yield::Finished(Ok(v));
                    }
                    self.stack.push(v);
                }
            }
        }
    }

    fn step_push(&mut self, fi: usize, v: Value) {
        self.stack.push(v);
        self.frames[fi].pc += 1;
    }

    fn pop(&mut self) -> Value {
        self.stack.pop().expect("operand stack underflow")
    }

    fn get_member(&self, o: &Value, key: &str) -> Result<Value, String> {
        match o {
            Value::Obj(id) => match self.heap.get(*id) {
                Object::Record(map) => Ok(map.get(key).cloned().unwrap_or(Value::Null)),
                Object::Array(items) if key == "length" => Ok(Value::Num(items.len() as f64)),
                Object::Array(_) => Ok(Value::Null),
                _ => Err(format!("cannot read property `{key}`")),
            },
            Value::Str(s) if key == "length" => Ok(Value::Num(s.chars().count() as f64)),
            other => Err(format!("cannot read property `{key}` of {}", other.type_name())),
        }
    }

    fn get_index(&self, o: &Value, i: &Value) -> Result<Value, String> {
        match (o, i) {
            (Value::Obj(id), _) => match (self.heap.get(*id), i) {
                (Object::Array(items), Value::Num(n)) => {
                    Ok(index_of(*n, items.len()).map(|k| items[k].clone()).unwrap_or(Value::Null))
                }
                (Object::Record(map), Value::Str(k)) => Ok(map.get(&**k).cloned().unwrap_or(Value::Null)),
                (Object::Record(map), Value::Num(n)) => {
                    Ok(map.get(format_number(*n).as_str()).cloned().unwrap_or(Value::Null))
                }
                _ => Err(format!("cannot index with {}", i.type_name())),
            },
            (Value::Str(s), Value::Num(n)) => Ok(index_of(*n, s.chars().count())
                .and_then(|k| s.chars().nth(k))
                .map(|c| Value::str(c.to_string()))
                .unwrap_or(Value::Null)),
            _ => Err(format!("cannot index {}", o.type_name())),
        }
    }

    fn set_index(&mut self, o: &Value, i: &Value, v: Value) -> Result<(), String> {
        let Value::Obj(id) = o else {
            return Err(format!("cannot index {}", o.type_name()));
        };
        match (self.heap.get_mut(*id), i) {
            (Object::Array(items), Value::Num(n)) => {
                let k = match index_of(*n, usize::MAX) {
                    Some(k) if k <= items.len() + 1024 => k,
                    _ => return Err(format!("bad array index {}", format_number(*n))),
                };
                if k >= items.len() {
                    items.resize(k + 1, Value::Null);
                }
                items[k] = v;
                Ok(())
            }
            (Object::Record(map), Value::Str(k)) => {
                map.insert(k.clone(), v);
                Ok(())
            }
            (Object::Record(map), Value::Num(n)) => {
                map.insert(format_number(*n).into(), v);
                Ok(())
            }
            _ => Err(format!("cannot index with {}", i.type_name())),
        }
    }

    fn intrinsic(&mut self, op: Intrinsic, mut args: Vec<Value>) -> Result<Value, String> {
        args.resize(args.len().max(2), Value::Null);
        match op {
            Intrinsic::Len => match &args[0] {
                Value::Str(s) => Ok(Value::Num(s.chars().count() as f64)),
                Value::Obj(id) => match self.heap.get(*id) {
                    Object::Array(a) => Ok(Value::Num(a.len() as f64)),
                    Object::Record(m) => Ok(Value::Num(m.len() as f64)),
                    _ => Err("len of non-collection".into()),
                },
                other => Err(format!("len of {}", other.type_name())),
            },
            Intrinsic::Push => match &args[0] {
                Value::Obj(id) => match self.heap.get_mut(*id) {
                    Object::Array(a) => {
                        a.push(args[1].clone());
                        Ok(Value::Num(a.len() as f64))
                    }
                    _ => Err("push to non-array".into()),
                },
                other => Err(format!("push to {}", other.type_name())),
            },
            Intrinsic::Pop => match &args[0] {
                Value::Obj(id) => match self.heap.get_mut(*id) {
                    Object::Array(a) => Ok(a.pop().unwrap_or(Value::Null)),
                    _ => Err("pop from non-array".into()),
                },
                other => Err(format!("pop from {}", other.type_name())),
            },
            Intrinsic::Str => Ok(Value::str(args[0].to_string())),
            Intrinsic::Floor => match args[0] {
                Value::Num(n) => Ok(Value::Num(n.floor())),
                ref other => Err(format!("floor of {}", other.type_name())),
            },
        }
    }

    /// Runs one callback to completion, answering host calls with `host`.
    pub fn run_event(
        &mut self,
        callback: &Value,
        args: Vec<Value>,
        host: &mut HostFn<'_>,
    ) -> Result<EventCompletion, InterpError> {
        self.begin_event();
        self.invoke(callback, args)?;
        let mut done = EventCompletion::default();
        loop {
            match self.resume() {
                Yield::Statement(_) => {}
                Yield::HostCall { kind, args } => {
                    let r = host(&mut self.heap, kind, args);
                    self.host_return(r);
                }
                Yield::Finished(r) => {
                    if let Err(e) = r {
                        done.errors.push(e);
                    }
                    break;
                }
            }
        }
        done.statements = self.event_statements;
        done.host_interactions = self.event_host_calls;
        Ok(done)
    }
}

fn index_of(n: f64, len: usize) -> Option<usize> {
    (n >= 0.0 && n.fract() == 0.0 && (n as usize) < len).then_some(n as usize)
}

fn binary(op: BinOp, a: &Value, b: &Value) -> Result<Value, String> {
    use BinOp::*;
    Ok(match (op, a, b) {
        (Add, Value::Num(x), Value::Num(y)) => Value::Num(x + y),
        (Add, Value::Str(_), _) | (Add, _, Value::Str(_)) => Value::str(format!("{a}{b}")),
        (Sub, Value::Num(x), Value::Num(y)) => Value::Num(x - y),
        (Mul, Value::Num(x), Value::Num(y)) => Value::Num(x * y),
        (Div, Value::Num(x), Value::Num(y)) => Value::Num(x / y),
        (Rem, Value::Num(x), Value::Num(y)) => Value::Num(x % y),
        (Eq, _, _) => Value::Bool(a == b),
        (Ne, _, _) => Value::Bool(a != b),
        (Lt | Le | Gt | Ge, Value::Num(x), Value::Num(y)) => Value::Bool(cmp(op, x.partial_cmp(y))),
        (Lt | Le | Gt | Ge, Value::Str(x), Value::Str(y)) => Value::Bool(cmp(op, Some(x.cmp(y)))),
        _ => return Err(format!("unsupported operands {} and {} for {op:?}", a.type_name(), b.type_name())),
    })
}

fn cmp(op: BinOp, o: Option<std::cmp::Ordering>) -> bool {
    use std::cmp::Ordering::*;
    match (op, o) {
        (_, None) => false,
        (BinOp::Lt, Some(o)) => o == Less,
        (BinOp::Le, Some(o)) => o != Greater,
        (BinOp::Gt, Some(o)) => o == Greater,
        (BinOp::Ge, Some(o)) => o != Less,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interp(src: &str, yield_statements: bool) -> Interpreter {
        let p = Arc::new(Program::from_source("main", src).unwrap());
        Interpreter::new(p, InterpConfig { yield_statements, ..Default::default() })
    }

    fn null_host(_: &mut Heap, _: HostCallKind, _: Vec<Value>) -> Result<Value, String> {
        Ok(Value::Null)
    }

    /// Runs the single script as one event, recording every statement start
    /// with the top frame's logical time.
    fn trace(it: &mut Interpreter) -> Vec<(StmtId, LogicalTime)> {
        it.begin_event();
        it.enable_monitors();
        it.invoke_script(0).unwrap();
        let mut out = Vec::new();
        loop {
            match it.resume() {
                Yield::Statement(s) => out.push((s, it.current_location().unwrap().1)),
                Yield::HostCall { .. } => it.host_return(Ok(Value::Null)),
                Yield::Finished(r) => {
                    r.unwrap();
                    return out;
                }
            }
        }
    }

    #[test]
    fn third_call_second_iteration() {
        let src = "function a(n){ let i = 0; while (i < n) { i = i + 1; } return i; }\na(2); a(2); a(2);";
        let mut it = interp(src, true);
        let body = it.program().stmt_at_line("main", 1).unwrap();
        let inc = it.program().statements.iter().position(|m| m.loc.col == 43 && m.loc.line == 1).unwrap() as StmtId;
        assert_ne!(body, inc);
        let hits: Vec<_> = trace(&mut it).into_iter().filter(|(s, _)| *s == inc).map(|(_, t)| t).collect();
        // Oracle: 3 calls x 2 iterations, times listed by hand.
        let expected: Vec<LogicalTime> =
            [(1, 1), (1, 2), (2, 1), (2, 2), (3, 1), (3, 2)].iter().map(|&(c, b)| LogicalTime::new(c, b)).collect();
        assert_eq!(hits, expected);
        assert_eq!(hits.iter().filter(|t| **t == LogicalTime::new(3, 2)).count(), 1);
    }

    #[test]
    fn first_statement_of_first_call_is_1_0() {
        let mut it = interp("function f(){ let x = 1; }\nf();", true);
        let t = trace(&mut it);
        let f_first = t.iter().find(|(s, _)| it.program().stmt(*s).func == 0).unwrap();
        assert_eq!(f_first.1, LogicalTime::new(1, 0));
    }

    #[test]
    fn not_paused_is_error() {
        let it = interp("let x = 1;", true);
        assert_eq!(it.current_location().unwrap_err(), InterpError::MonitorsDisabled);
        let mut it = interp("let x = 1;", true);
        it.enable_monitors();
        assert_eq!(it.current_location().unwrap_err(), InterpError::NotPaused);
    }

    #[test]
    fn enable_with_empty_stack_has_empty_stores() {
        let mut it = interp("let x = 1;", false);
        it.enable_monitors();
        assert!(it.timestamp_store().is_empty());
        assert!(it.branch_trace_store().is_empty());
    }

    #[test]
    fn disabled_monitors_leave_stores_empty() {
        let mut it = interp("function f(){ let i = 0; while (i < 3) { i = i + 1; } }\nlet g = f;", true);
        it.invoke_script(0).unwrap();
        assert!(matches!(it.resume(), Yield::Statement(_)));
        while !matches!(it.resume(), Yield::Finished(_)) {}
        let f = it.global("f").unwrap();
        it.begin_event();
        it.invoke(&f, vec![]).unwrap();
        loop {
            assert!(it.branch_trace_store().is_empty());
            assert!(it.timestamp_store().is_empty());
            if let Yield::Finished(_) = it.resume() {
                break;
            }
        }
    }

    #[test]
    fn counts_statements_and_host_calls() {
        let mut it = interp("let x = 0;\nfunction inc(){ x = x + 1; }\nfunction rnd(){ random(); random(); }", false);
        it.invoke_script(0).unwrap();
        assert!(matches!(it.resume(), Yield::Finished(Ok(_))));
        let inc = it.global("inc").unwrap();
        let done = it.run_event(&inc, vec![], &mut null_host).unwrap();
        assert_eq!(done.statements, 1);
        assert_eq!(it.global("x"), Some(Value::Num(1.0)));
        let rnd = it.global("rnd").unwrap();
        let done = it.run_event(&rnd, vec![], &mut null_host).unwrap();
        assert_eq!(done.host_interactions, 2);
    }

    #[test]
    fn runaway_loop_hits_budget() {
        let p = Arc::new(Program::from_source("main", "function spin(){ while (true) { } }").unwrap());
        let mut it = Interpreter::new(p, InterpConfig { statement_budget: 10_000_000, ..Default::default() });
        it.invoke_script(0).unwrap();
        it.resume();
        let spin = it.global("spin").unwrap();
        let done = it.run_event(&spin, vec![], &mut null_host).unwrap();
        assert_eq!(done.errors.len(), 1);
        assert!(done.errors[0].message.contains("budget"));
        assert_eq!(done.statements, 10_000_001);
        assert!(it.is_idle());
    }

    #[test]
    fn closures_capture_environment() {
        let src = "function counter(){ let n = 0; return function(){ n = n + 1; return n; }; }\n\
                   let c = counter(); c(); c(); let r = c();";
        let mut it = interp(src, false);
        it.invoke_script(0).unwrap();
        assert!(matches!(it.resume(), Yield::Finished(Ok(_))));
        assert_eq!(it.global("r"), Some(Value::Num(3.0)));
    }

    #[test]
    fn uncaught_error_aborts_invocation() {
        let mut it = interp("let a = 1; let b = nope + 1; let c = 2;", false);
        it.invoke_script(0).unwrap();
        match it.resume() {
            Yield::Finished(Err(e)) => {
                assert!(e.message.contains("nope"));
                assert_eq!(e.stmt, Some(1));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(it.global("c"), None);
    }

    #[test]
    fn monitored_and_unmonitored_runs_match() {
        let src = "let out = [];\nfunction fib(n){ if (n < 2) { return n; } return fib(n - 1) + fib(n - 2); }\n\
                   let i = 0; while (i < 8) { push(out, fib(i)); i = i + 1; }\nlet s = str(out[7]) + \"!\";";
        let run = |mon: bool| {
            let mut it = interp(src, true);
            if mon {
                it.enable_monitors();
            }
            it.invoke_script(0).unwrap();
            let mut stmts = Vec::new();
            loop {
                match it.resume() {
                    Yield::Statement(s) => stmts.push(s),
                    Yield::Finished(r) => {
                        r.unwrap();
                        break;
                    }
                    _ => unreachable!(),
                }
            }
            (stmts, it.global("s"))
        };
        let (a, sa) = run(false);
        let (b, sb) = run(true);
        assert_eq!(a, b);
        assert_eq!(sa, Some(Value::str("13!")));
        assert_eq!(sa, sb);
    }

    #[test]
    fn loop_entry_records_header_source() {
        let src = "let i = 0;\nwhile (i < 2) {\n  i = i + 1;\n}";
        let mut it = interp(src, true);
        let header = it.program().stmt_at_line("main", 2).unwrap();
        let body = it.program().stmt_at_line("main", 3).unwrap();
        it.begin_event();
        it.enable_monitors();
        it.invoke_script(0).unwrap();
        let mut seen = 0;
        loop {
            match it.resume() {
                Yield::Statement(s) if s == body => {
                    seen += 1;
                    let rec = it.branch_record(body).unwrap();
                    assert_eq!(rec.edge, EdgeKind::LoopEntry);
                    let src = rec.source.unwrap();
                    assert_eq!(src.stmt, header);
                    let now = it.current_location().unwrap().1;
                    assert_eq!(src.time, LogicalTime::new(now.call_count, now.back_jumps - 1));
                }
                Yield::Finished(_) => break,
                _ => {}
            }
        }
        assert_eq!(seen, 2);
    }
}
