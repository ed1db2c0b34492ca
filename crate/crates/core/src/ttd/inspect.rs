//! Read-only JSON views of the paused state. Views never expose heap
//! addresses, so they compare equal across restores from different
//! checkpoints.

use serde_json::{json, Map, Value as Json};

use super::{DebugError, DebugSession};
use crate::guest::{format_number, Heap, HostRef, ObjId, Object, Program, Value};
use crate::host::{HostWorld, LoadState};

pub const DEFAULT_PAGE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Page {
    pub offset: usize,
    pub limit: usize,
}

impl Default for Page {
    fn default() -> Self {
        Page { offset: 0, limit: DEFAULT_PAGE }
    }
}

fn paged<T>(items: Vec<T>, page: Page) -> (Vec<T>, usize) {
    let total = items.len();
    (items.into_iter().skip(page.offset).take(page.limit).collect(), total)
}

fn page_json(items: Vec<Json>, page: Page) -> Json {
    let (items, total) = paged(items, page);
    json!({ "total": total, "offset": page.offset, "items": items })
}

fn number(n: f64) -> Json {
    if n.is_finite() {
        json!(n)
    } else {
        json!(format_number(n))
    }
}

pub fn render_value(program: &Program, heap: &Heap, world: &HostWorld, v: &Value) -> Json {
    match v {
        Value::Num(n) => json!({ "type": "number", "value": number(*n) }),
        Value::Str(s) => json!({ "type": "string", "value": &**s }),
        Value::Bool(b) => json!({ "type": "boolean", "value": b }),
        Value::Null => json!({ "type": "null" }),
        Value::Obj(o) => match heap.get(*o) {
            Object::Record(props) => {
                let keys: Vec<&str> = props.keys().map(|k| &**k).collect();
                json!({ "type": "object", "size": props.len(), "preview": format!("{{{}}}", keys.join(", ")) })
            }
            Object::Array(items) => json!({ "type": "array", "length": items.len() }),
            Object::Closure { .. } | Object::Env { .. } => json!({ "type": "internal" }),
        },
        Value::Func(o) => match heap.get(*o) {
            Object::Closure { func, .. } => json!({ "type": "function", "name": &*program.function(*func).name }),
            _ => json!({ "type": "function" }),
        },
        Value::Host(HostRef::Node(n)) => {
            let tag = world.dom.get(*n).map(|d| d.tag.clone()).unwrap_or_default();
            json!({ "type": "node", "id": n, "tag": tag })
        }
        Value::Host(HostRef::Request(r)) => json!({ "type": "request", "id": r }),
    }
}

/// One-line text form, for scripted output.
pub fn value_text(j: &Json) -> String {
    let s = |k: &str| j.get(k).cloned().unwrap_or(Json::Null);
    match j.get("type").and_then(Json::as_str).unwrap_or("") {
        "number" => match s("value") {
            Json::Number(n) => format_number(n.as_f64().unwrap_or(f64::NAN)),
            other => other.as_str().unwrap_or("").to_string(),
        },
        "string" => format!("{:?}", s("value").as_str().unwrap_or("")),
        "boolean" => s("value").to_string(),
        "null" => "null".into(),
        "object" => s("preview").as_str().unwrap_or("{}").to_string(),
        "array" => format!("[array({})]", s("length")),
        "function" => format!("[function {}]", s("name").as_str().unwrap_or("?")),
        "node" => format!("[node {} {}]", s("id"), s("tag").as_str().unwrap_or("")),
        "request" => format!("[request {}]", s("id")),
        other => format!("[{other}]"),
    }
}

impl DebugSession {
    fn parts(&self) -> (&Program, &Heap, &HostWorld) {
        let m = &self.replayer().machine;
        (self.program(), m.interp.heap(), &m.world)
    }

    fn env_vars(&self, env: ObjId) -> Vec<(String, Value)> {
        match self.replayer().machine.interp.heap().get(env) {
            Object::Env { vars, .. } => vars.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            _ => Vec::new(),
        }
    }

    /// Variables of frame `frame` (0 is the innermost).
    pub fn inspect_locals(&self, frame: usize, page: Page) -> Result<Json, DebugError> {
        let frames = self.replayer().machine.interp.frames();
        if self.pause().is_none() {
            return Ok(page_json(Vec::new(), page));
        }
        let f = frames
            .iter()
            .rev()
            .nth(frame)
            .ok_or_else(|| DebugError::OutOfRange(format!("no frame {frame} (stack depth {})", frames.len())))?;
        let (program, heap, world) = self.parts();
        let items = self
            .env_vars(f.env)
            .into_iter()
            .map(|(k, v)| json!({ "name": k, "value": render_value(program, heap, world, &v) }))
            .collect();
        Ok(page_json(items, page))
    }

    /// Innermost frame first.
    pub fn inspect_stack(&self) -> Json {
        if self.pause().is_none() {
            return json!([]);
        }
        let frames = self.replayer().machine.interp.frames();
        let program = self.program();
        Json::Array(
            frames
                .iter()
                .rev()
                .enumerate()
                .map(|(i, f)| {
                    json!({
                        "index": i,
                        "function": &*f.name,
                        "location": f.stmt.map(|s| program.describe(s)),
                        "time": f.time.to_string(),
                    })
                })
                .collect(),
        )
    }

    /// `globals.config.items[2]`, `locals.x`, or a variable visible from the
    /// paused frame.
    pub fn inspect_heap(&self, path: &str, page: Page) -> Result<Json, DebugError> {
        let bad = || DebugError::InvalidHeapPath(path.to_string());
        let segs = parse_path(path).ok_or_else(bad)?;
        let interp = &self.replayer().machine.interp;
        let (program, heap, world) = self.parts();
        let top_env = interp.frames().last().map(|f| f.env);
        let mut iter = segs.into_iter();
        let first = match iter.next() {
            Some(Seg::Key(k)) => k,
            _ => return Err(bad()),
        };
        let mut cur = match first.as_str() {
            "globals" => Cursor::Env(interp.global_env()),
            "locals" => Cursor::Env(top_env.ok_or_else(bad)?),
            name => {
                let env = top_env.unwrap_or(interp.global_env());
                Cursor::Val(lookup(heap, env, name).ok_or_else(bad)?)
            }
        };
        for seg in iter {
            cur = match (&cur, seg) {
                (Cursor::Env(env), Seg::Key(k)) => match heap.get(*env) {
                    Object::Env { vars, .. } => Cursor::Val(vars.get(k.as_str()).cloned().ok_or_else(bad)?),
                    _ => return Err(bad()),
                },
                (Cursor::Val(Value::Obj(o)), Seg::Key(k)) => match heap.get(*o) {
                    Object::Record(props) => Cursor::Val(props.get(k.as_str()).cloned().ok_or_else(bad)?),
                    Object::Array(items) if k == "length" => Cursor::Val(Value::Num(items.len() as f64)),
                    _ => return Err(bad()),
                },
                (Cursor::Val(Value::Obj(o)), Seg::Index(i)) => match heap.get(*o) {
                    Object::Array(items) => Cursor::Val(items.get(i).cloned().ok_or_else(bad)?),
                    _ => return Err(bad()),
                },
                _ => return Err(bad()),
            };
        }
        let (value, children): (Json, Vec<Json>) = match &cur {
            Cursor::Env(env) => (
                json!({ "type": "scope" }),
                self.env_vars(*env)
                    .into_iter()
                    .map(|(k, v)| json!({ "key": k, "value": render_value(program, heap, world, &v) }))
                    .collect(),
            ),
            Cursor::Val(v) => {
                let children = match v {
                    Value::Obj(o) => match heap.get(*o) {
                        Object::Record(props) => props
                            .iter()
                            .map(|(k, v)| json!({ "key": &**k, "value": render_value(program, heap, world, v) }))
                            .collect(),
                        Object::Array(items) => items
                            .iter()
                            .enumerate()
                            .map(|(i, v)| json!({ "key": i, "value": render_value(program, heap, world, v) }))
                            .collect(),
                        _ => Vec::new(),
                    },
                    _ => Vec::new(),
                };
                (render_value(program, heap, world, v), children)
            }
        };
        let (children, total) = paged(children, page);
        Ok(json!({ "path": path, "value": value, "total": total, "offset": page.offset, "children": children }))
    }

    /// Pre-order DOM with attributes sorted, listeners in registration
    /// order, animation frame counts and resource states.
    pub fn inspect_dom(&self, page: Page) -> Json {
        let (program, heap, world) = self.parts();
        let items = world
            .dom
            .preorder()
            .into_iter()
            .map(|(id, depth)| {
                let n = world.dom.get(id).unwrap();
                let mut attrs: Vec<(&String, &String)> = n.attrs.iter().collect();
                attrs.sort();
                let attrs: Map<String, Json> = attrs.into_iter().map(|(k, v)| (k.clone(), json!(v))).collect();
                let listeners: Vec<Json> = n
                    .listeners
                    .iter()
                    .map(|l| {
                        let handler = match &l.callback {
                            crate::host::Callback::Func(v) => value_text(&render_value(program, heap, world, v)),
                            crate::host::Callback::Global(name) => format!("@{name}"),
                        };
                        json!({ "event": l.event, "handler": handler })
                    })
                    .collect();
                let mut node = json!({
                    "id": id,
                    "depth": depth,
                    "tag": n.tag,
                    "attrs": attrs,
                    "listeners": listeners,
                });
                if let Some(a) = world.animations.get(&id) {
                    node["animation"] = json!({ "frames": a.frame_count, "period": a.period, "active": a.active });
                }
                if let Some(r) = &n.resource {
                    node["resource"] = match &r.state {
                        LoadState::Pending => json!({ "url": r.url, "state": "pending" }),
                        LoadState::Failed => json!({ "url": r.url, "state": "failed" }),
                        LoadState::Loaded { width, height, bytes } => json!({
                            "url": r.url, "state": "loaded", "width": width, "height": height, "bytes": bytes
                        }),
                    };
                }
                node
            })
            .collect();
        page_json(items, page)
    }

    pub fn inspect_timers(&self) -> Json {
        let (program, heap, world) = self.parts();
        Json::Array(
            world
                .timers
                .values()
                .map(|t| {
                    json!({
                        "id": t.id,
                        "due": t.due,
                        "period": t.period,
                        "callback": value_text(&render_value(program, heap, world, &t.callback)),
                    })
                })
                .collect(),
        )
    }

    pub fn inspect_requests(&self) -> Json {
        let world = &self.replayer().machine.world;
        Json::Array(
            world
                .requests
                .values()
                .map(|r| {
                    json!({
                        "id": r.id,
                        "method": r.method,
                        "url": r.url,
                        "state": r.state.name(),
                        "status": r.status,
                        "received": r.received,
                        "listeners": r.listeners.len(),
                    })
                })
                .collect(),
        )
    }

    pub fn inspect_storage(&self) -> Json {
        let world = &self.replayer().machine.world;
        Json::Object(world.storage.iter().map(|(k, v)| (k.clone(), json!(v))).collect())
    }

    pub fn inspect_animations(&self) -> Json {
        let world = &self.replayer().machine.world;
        Json::Array(
            world
                .animations
                .values()
                .map(|a| json!({ "node": a.node, "frames": a.frame_count, "period": a.period, "active": a.active }))
                .collect(),
        )
    }

    /// Canonical host state text at the paused point.
    pub fn canonical_world(&self) -> String {
        let snap_world = &self.replayer().machine.world;
        snap_world.canonical(&|v| value_text(&render_value(self.program(), self.parts().1, snap_world, v)))
    }
}

enum Cursor {
    Env(ObjId),
    Val(Value),
}

#[derive(Debug, PartialEq)]
enum Seg {
    Key(String),
    Index(usize),
}

fn lookup(heap: &Heap, mut env: ObjId, name: &str) -> Option<Value> {
    loop {
        match heap.get(env) {
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

fn parse_path(path: &str) -> Option<Vec<Seg>> {
    let mut out = Vec::new();
    let b = path.as_bytes();
    let mut i = 0;
    let ident = |i: &mut usize| {
        let s = *i;
        while *i < b.len() && (b[*i].is_ascii_alphanumeric() || b[*i] == b'_' || b[*i] == b'$') {
            *i += 1;
        }
        (s < *i).then(|| path[s..*i].to_string())
    };
    out.push(Seg::Key(ident(&mut i)?));
    while i < b.len() {
        match b[i] {
            b'.' => {
                i += 1;
                out.push(Seg::Key(ident(&mut i)?));
            }
            b'[' => {
                let s = i + 1;
                let e = s + path[s..].find(']')?;
                out.push(Seg::Index(path[s..e].trim().parse().ok()?));
                i = e + 1;
            }
            _ => return None,
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heap_paths_parse() {
        assert_eq!(
            parse_path("globals.config.items[2]"),
            Some(vec![Seg::Key("globals".into()), Seg::Key("config".into()), Seg::Key("items".into()), Seg::Index(2)])
        );
        assert_eq!(parse_path("a..b"), None);
        assert_eq!(parse_path("a[x]"), None);
        assert_eq!(parse_path(""), None);
    }
}
