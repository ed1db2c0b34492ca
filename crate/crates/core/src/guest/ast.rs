use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Synchronous guest-to-host interfaces. Every call is one host interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HostCallKind {
    Random,
    DateNow,
    SetTimeout,
    SetInterval,
    ClearTimer,
    CreateElement,
    AppendChild,
    RemoveChild,
    SetAttribute,
    GetAttribute,
    QueryNode,
    AddEventListener,
    RemoveEventListener,
    XhrOpen,
    XhrSend,
    XhrStatus,
    XhrResponse,
    StorageGet,
    StorageSet,
    StorageRemove,
    ConsoleLog,
}

impl HostCallKind {
    pub const ALL: [HostCallKind; 21] = [
        HostCallKind::Random,
        HostCallKind::DateNow,
        HostCallKind::SetTimeout,
        HostCallKind::SetInterval,
        HostCallKind::ClearTimer,
        HostCallKind::CreateElement,
        HostCallKind::AppendChild,
        HostCallKind::RemoveChild,
        HostCallKind::SetAttribute,
        HostCallKind::GetAttribute,
        HostCallKind::QueryNode,
        HostCallKind::AddEventListener,
        HostCallKind::RemoveEventListener,
        HostCallKind::XhrOpen,
        HostCallKind::XhrSend,
        HostCallKind::XhrStatus,
        HostCallKind::XhrResponse,
        HostCallKind::StorageGet,
        HostCallKind::StorageSet,
        HostCallKind::StorageRemove,
        HostCallKind::ConsoleLog,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HostCallKind::Random => "random",
            HostCallKind::DateNow => "date_now",
            HostCallKind::SetTimeout => "set_timeout",
            HostCallKind::SetInterval => "set_interval",
            HostCallKind::ClearTimer => "clear_timer",
            HostCallKind::CreateElement => "create_element",
            HostCallKind::AppendChild => "append_child",
            HostCallKind::RemoveChild => "remove_child",
            HostCallKind::SetAttribute => "set_attribute",
            HostCallKind::GetAttribute => "get_attribute",
            HostCallKind::QueryNode => "query_node",
            HostCallKind::AddEventListener => "add_event_listener",
            HostCallKind::RemoveEventListener => "remove_event_listener",
            HostCallKind::XhrOpen => "xhr_open",
            HostCallKind::XhrSend => "xhr_send",
            HostCallKind::XhrStatus => "xhr_status",
            HostCallKind::XhrResponse => "xhr_response",
            HostCallKind::StorageGet => "storage_get",
            HostCallKind::StorageSet => "storage_set",
            HostCallKind::StorageRemove => "storage_remove",
            HostCallKind::ConsoleLog => "console_log",
        }
    }

    pub fn from_name(name: &str) -> Option<HostCallKind> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// Pure built-ins. They never touch the host and are not interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intrinsic {
    Len,
    Push,
    Pop,
    Str,
    Floor,
}

impl Intrinsic {
    pub fn from_name(name: &str) -> Option<Intrinsic> {
        Some(match name {
            "len" => Intrinsic::Len,
            "push" => Intrinsic::Push,
            "pop" => Intrinsic::Pop,
            "str" => Intrinsic::Str,
            "floor" => Intrinsic::Floor,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone)]
pub enum Expr {
    Num(f64),
    Str(Arc<str>),
    Bool(bool),
    Null,
    Var(Arc<str>),
    Object(Vec<(Arc<str>, Expr)>),
    Array(Vec<Expr>),
    /// Closure literal; the index is a program-wide function id.
    Function(u32),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Member(Box<Expr>, Arc<str>),
    Index(Box<Expr>, Box<Expr>),
    Call(Box<Expr>, Vec<Expr>),
    Host(HostCallKind, Vec<Expr>),
    Intrinsic(Intrinsic, Vec<Expr>),
}

impl Expr {
    /// True if evaluating this expression may push a guest call frame.
    pub fn contains_call(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Str(_) | Expr::Bool(_) | Expr::Null | Expr::Var(_) | Expr::Function(_) => false,
            Expr::Object(fields) => fields.iter().any(|(_, e)| e.contains_call()),
            Expr::Array(items) | Expr::Host(_, items) | Expr::Intrinsic(_, items) => {
                items.iter().any(Expr::contains_call)
            }
            Expr::Unary(_, e) | Expr::Member(e, _) => e.contains_call(),
            Expr::Binary(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) | Expr::Index(a, b) => {
                a.contains_call() || b.contains_call()
            }
            Expr::Call(..) => true,
        }
    }
}

#[derive(Debug, Clone)]
pub enum LValue {
    Var(Arc<str>),
    Member(Expr, Arc<str>),
    Index(Expr, Expr),
}

#[derive(Debug, Clone)]
pub enum StmtKind {
    Let(Arc<str>, Expr),
    Assign(LValue, Expr),
    Expr(Expr),
    If(Expr, Body, Body),
    While(Expr, Body),
    Return(Option<Expr>),
}

#[derive(Debug, Clone)]
pub struct Stmt {
    /// Ordinal of the statement within its script, in source pre-order.
    pub index: u32,
    pub line: u32,
    pub col: u32,
    pub kind: StmtKind,
}

impl Stmt {
    pub fn contains_call(&self) -> bool {
        match &self.kind {
            StmtKind::Let(_, e) | StmtKind::Expr(e) | StmtKind::If(e, ..) | StmtKind::While(e, _) => e.contains_call(),
            StmtKind::Return(e) => e.as_ref().is_some_and(Expr::contains_call),
            StmtKind::Assign(lv, e) => {
                e.contains_call()
                    || match lv {
                        LValue::Var(_) => false,
                        LValue::Member(o, _) => o.contains_call(),
                        LValue::Index(o, i) => o.contains_call() || i.contains_call(),
                    }
            }
        }
    }
}

/// A statement list plus the function declarations hoisted to its scope.
#[derive(Debug, Clone, Default)]
pub struct Body {
    pub stmts: Vec<Stmt>,
    /// Hoisted `function name(...)` declarations: (name, function id).
    pub decls: Vec<(Arc<str>, u32)>,
}

#[derive(Debug, Clone)]
pub struct FunctionAst {
    pub id: u32,
    pub name: Arc<str>,
    pub params: Vec<Arc<str>>,
    pub body: Body,
    pub line: u32,
    pub col: u32,
}

#[derive(Debug, Clone)]
pub struct ScriptAst {
    pub script_id: u32,
    pub body: Body,
    pub functions: Vec<FunctionAst>,
    pub stmt_count: u32,
}
