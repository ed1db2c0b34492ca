use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::FunctionId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjId(pub u32);

/// Handle into host state. Opaque to guest code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HostRef {
    Node(u32),
    Request(u32),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Value {
    Num(f64),
    Str(Arc<str>),
    Bool(bool),
    Null,
    Obj(ObjId),
    Func(ObjId),
    Host(HostRef),
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Num(a), Value::Num(b)) => a == b,
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Null, Value::Null) => true,
            (Value::Obj(a), Value::Obj(b)) | (Value::Func(a), Value::Func(b)) => a == b,
            (Value::Host(a), Value::Host(b)) => a == b,
            _ => false,
        }
    }
}

impl Value {
    pub fn str(s: impl Into<Arc<str>>) -> Value {
        Value::Str(s.into())
    }

    pub fn truthy(&self) -> bool {
        match self {
            Value::Num(n) => *n != 0.0 && !n.is_nan(),
            Value::Str(s) => !s.is_empty(),
            Value::Bool(b) => *b,
            Value::Null => false,
            _ => true,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Num(_) => "number",
            Value::Str(_) => "string",
            Value::Bool(_) => "boolean",
            Value::Null => "null",
            Value::Obj(_) => "object",
            Value::Func(_) => "function",
            Value::Host(HostRef::Node(_)) => "node",
            Value::Host(HostRef::Request(_)) => "request",
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }
}

pub fn format_number(n: f64) -> String {
    if n.is_finite() && n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else if n.is_nan() {
        "NaN".to_string()
    } else {
        format!("{n}")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(n) => f.write_str(&format_number(*n)),
            Value::Str(s) => f.write_str(s),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Null => f.write_str("null"),
            Value::Obj(_) => f.write_str("[object]"),
            Value::Func(_) => f.write_str("[function]"),
            Value::Host(HostRef::Node(id)) => write!(f, "[node {id}]"),
            Value::Host(HostRef::Request(id)) => write!(f, "[request {id}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Object {
    Record(IndexMap<Arc<str>, Value>),
    Array(Vec<Value>),
    Closure {
        func: FunctionId,
        env: ObjId,
    },
    /// A function activation's variables; closures capture these by reference.
    Env {
        vars: IndexMap<Arc<str>, Value>,
        parent: Option<ObjId>,
    },
}

/// Arena heap. Objects are never freed during a run; checkpoints keep only
/// what is reachable and restore into a compact arena.
#[derive(Debug, Clone, Default)]
pub struct Heap {
    objects: Vec<Object>,
}

impl Heap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, obj: Object) -> ObjId {
        self.objects.push(obj);
        ObjId(self.objects.len() as u32 - 1)
    }

    pub fn get(&self, id: ObjId) -> &Object {
        &self.objects[id.0 as usize]
    }

    pub fn get_mut(&mut self, id: ObjId) -> &mut Object {
        &mut self.objects[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn from_objects(objects: Vec<Object>) -> Self {
        Heap { objects }
    }

    pub fn objects(&self) -> &[Object] {
        &self.objects
    }

    /// Heap references held directly by `obj`, in a fixed order.
    pub fn children(obj: &Object) -> Vec<ObjId> {
        fn of(v: &Value) -> Option<ObjId> {
            match v {
                Value::Obj(o) | Value::Func(o) => Some(*o),
                _ => None,
            }
        }
        match obj {
            Object::Record(props) => props.values().filter_map(of).collect(),
            Object::Array(items) => items.iter().filter_map(of).collect(),
            Object::Closure { env, .. } => vec![*env],
            Object::Env { vars, parent } => {
                let mut out: Vec<ObjId> = parent.iter().copied().collect();
                out.extend(vars.values().filter_map(of));
                out
            }
        }
    }
}
