//! The guest scripting language: a small, deterministic, single-threaded,
//! event-driven language with closures, objects and arrays.
//!
//! Source is parsed per script, lowered to per-function control flow graphs,
//! and compiled to a stack bytecode whose `Stmt` markers are the only
//! points where execution can pause.

pub mod ast;
pub mod cfg;
mod compile;
pub mod interp;
mod lexer;
pub mod parser;
pub mod value;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ast::{HostCallKind, Intrinsic};
pub use cfg::{BasicBlock, BlockId, ControlFlowGraph, Target, Terminator};
pub use compile::Op;
pub use interp::{
    BranchRecord, EdgeKind, EventCompletion, FrameView, GuestError, InterpConfig, InterpError, Interpreter,
    StmtInstance, Yield,
};
pub use value::{format_number, Heap, HostRef, ObjId, Object, Value};

pub type FunctionId = u32;
/// Program-wide statement index.
pub type StmtId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at {line}:{col}: {message}")]
pub struct SyntaxError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

impl SyntaxError {
    pub fn new(line: u32, col: u32, message: impl Into<String>) -> Self {
        SyntaxError { line, col, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("{script}: {error}")]
    Syntax { script: String, error: SyntaxError },
    #[error("duplicate function name `{name}` across scripts")]
    DuplicateFunction { name: String },
}

/// Identifies a statement in source. Ordered by (script, statement ordinal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceLocation {
    pub script_id: u32,
    pub stmt_index: u32,
    pub line: u32,
    pub col: u32,
}

impl PartialOrd for SourceLocation {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SourceLocation {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.script_id, self.stmt_index).cmp(&(other.script_id, other.stmt_index))
    }
}

/// (call count, loop iterations) of one frame since monitors were enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct LogicalTime {
    pub call_count: u64,
    pub back_jumps: u64,
}

impl LogicalTime {
    pub fn new(call_count: u64, back_jumps: u64) -> Self {
        LogicalTime { call_count, back_jumps }
    }
}

impl fmt::Display for LogicalTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.call_count, self.back_jumps)
    }
}

#[derive(Debug, Clone)]
pub struct StmtMeta {
    pub loc: SourceLocation,
    pub func: FunctionId,
    pub block: BlockId,
    pub pos_in_block: u32,
    /// Statement is the condition of a `while` loop.
    pub loop_header: bool,
}

impl StmtMeta {
    pub fn is_block_entry(&self) -> bool {
        self.pos_in_block == 0
    }
}

#[derive(Debug, Clone)]
pub struct FunctionDef {
    pub id: FunctionId,
    pub name: Arc<str>,
    pub params: Vec<Arc<str>>,
    pub cfg: ControlFlowGraph,
    pub code: Vec<Op>,
    /// Function declarations hoisted into this function's scope.
    pub decls: Vec<(Arc<str>, FunctionId)>,
    /// Script bodies run in the global scope.
    pub script: Option<u32>,
    pub script_id: u32,
    pub line: u32,
    pub col: u32,
    /// Program-wide id of the first statement in each block.
    pub block_stmts: Vec<Vec<StmtId>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ScriptSource {
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct ScriptInfo {
    pub name: String,
    pub body: FunctionId,
    pub stmt_base: StmtId,
    pub stmt_count: u32,
}

/// A linked, compiled guest program.
#[derive(Debug, Clone)]
pub struct Program {
    pub sources: Vec<ScriptSource>,
    pub scripts: Vec<ScriptInfo>,
    pub functions: Vec<FunctionDef>,
    pub statements: Vec<StmtMeta>,
}

impl Program {
    pub fn from_sources(sources: Vec<ScriptSource>) -> Result<Program, ProgramError> {
        compile::link(sources)
    }

    /// Convenience for single-script programs.
    pub fn from_source(name: &str, text: &str) -> Result<Program, ProgramError> {
        Self::from_sources(vec![ScriptSource { name: name.to_string(), text: text.to_string() }])
    }

    pub fn stmt(&self, id: StmtId) -> &StmtMeta {
        &self.statements[id as usize]
    }

    pub fn function(&self, id: FunctionId) -> &FunctionDef {
        &self.functions[id as usize]
    }

    pub fn function_by_name(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| &*f.name == name)
    }

    pub fn stmt_id(&self, loc: &SourceLocation) -> Option<StmtId> {
        let script = self.scripts.get(loc.script_id as usize)?;
        (loc.stmt_index < script.stmt_count).then(|| script.stmt_base + loc.stmt_index)
    }

    /// First statement starting on `line` of the named script.
    pub fn stmt_at_line(&self, script: &str, line: u32) -> Option<StmtId> {
        let sid = self.scripts.iter().position(|s| s.name == script)? as u32;
        self.statements
            .iter()
            .enumerate()
            .filter(|(_, m)| m.loc.script_id == sid && m.loc.line == line)
            .min_by_key(|(_, m)| m.loc.col)
            .map(|(i, _)| i as StmtId)
    }

    /// Previous statement in the same basic block.
    pub fn prev_in_block(&self, id: StmtId) -> Option<StmtId> {
        let m = self.stmt(id);
        if m.pos_in_block == 0 {
            return None;
        }
        let f = self.function(m.func);
        Some(f.block_stmts[m.block as usize][m.pos_in_block as usize - 1])
    }

    pub fn script_name(&self, script_id: u32) -> &str {
        &self.scripts[script_id as usize].name
    }

    pub fn describe(&self, id: StmtId) -> String {
        let m = self.stmt(id);
        format!("{}:{}:{}", self.script_name(m.loc.script_id), m.loc.line, m.loc.col)
    }
}
