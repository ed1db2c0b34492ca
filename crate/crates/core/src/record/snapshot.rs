//! Checkpoint images: the reachable guest heap, compacted and renumbered in
//! traversal order, plus the full host world.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guest::{Heap, InterpConfig, Interpreter, ObjId, Object, Program, Value};
use crate::host::HostWorld;
use crate::machine::{digest64, Machine};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Snapshot {
    /// Object 0 is the global environment.
    pub objects: Vec<Object>,
    pub world: HostWorld,
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("checkpoint image is corrupt: {0}")]
    Decode(String),
    #[error("checkpoint image references missing object {0}")]
    Dangling(u32),
    #[error("checkpoint image has no global environment")]
    NoGlobal,
}

fn remap_value(v: &mut Value, map: &HashMap<ObjId, ObjId>) {
    if let Value::Obj(o) | Value::Func(o) = v {
        *o = map[o];
    }
}

fn remap_object(obj: &mut Object, map: &HashMap<ObjId, ObjId>) {
    match obj {
        Object::Record(props) => props.values_mut().for_each(|v| remap_value(v, map)),
        Object::Array(items) => items.iter_mut().for_each(|v| remap_value(v, map)),
        Object::Closure { env, .. } => *env = map[env],
        Object::Env { vars, parent } => {
            if let Some(p) = parent {
                *p = map[p];
            }
            vars.values_mut().for_each(|v| remap_value(v, map));
        }
    }
}

/// Captures the machine between events.
pub fn capture(interp: &Interpreter, world: &HostWorld) -> Snapshot {
    assert!(interp.is_idle(), "checkpoints are only taken between events");
    let heap = interp.heap();
    let mut world = world.clone();

    let mut order = Vec::new();
    let mut map = HashMap::new();
    let mut queue = VecDeque::new();
    let visit = |id: ObjId, map: &mut HashMap<ObjId, ObjId>, order: &mut Vec<ObjId>, queue: &mut VecDeque<ObjId>| {
        if let std::collections::hash_map::Entry::Vacant(e) = map.entry(id) {
            e.insert(ObjId(order.len() as u32));
            order.push(id);
            queue.push_back(id);
        }
    };
    let mut roots = vec![interp.global_env()];
    world.for_each_value_mut(&mut |v| {
        if let Value::Obj(o) | Value::Func(o) = v {
            roots.push(*o);
        }
    });
    for r in roots {
        visit(r, &mut map, &mut order, &mut queue);
        while let Some(id) = queue.pop_front() {
            for c in Heap::children(heap.get(id)) {
                visit(c, &mut map, &mut order, &mut queue);
            }
        }
    }

    let objects = order
        .iter()
        .map(|id| {
            let mut o = heap.get(*id).clone();
            remap_object(&mut o, &map);
            o
        })
        .collect();
    world.for_each_value_mut(&mut |v| remap_value(v, &map));
    Snapshot { objects, world }
}

impl Snapshot {
    pub fn encode(&self) -> Vec<u8> {
        bincode::serialize(self).expect("snapshot serializes")
    }

    pub fn decode(bytes: &[u8]) -> Result<Snapshot, SnapshotError> {
        let s: Snapshot = bincode::deserialize(bytes).map_err(|e| SnapshotError::Decode(e.to_string()))?;
        s.check()?;
        Ok(s)
    }

    /// Every reference stays inside the image.
    pub fn check(&self) -> Result<(), SnapshotError> {
        let n = self.objects.len() as u32;
        if n == 0 || !matches!(self.objects[0], Object::Env { .. }) {
            return Err(SnapshotError::NoGlobal);
        }
        let mut bad = None;
        for o in &self.objects {
            for c in Heap::children(o) {
                if c.0 >= n {
                    bad = Some(c.0);
                }
            }
        }
        let mut world = self.world.clone();
        world.for_each_value_mut(&mut |v| {
            if let Value::Obj(o) | Value::Func(o) = v {
                if o.0 >= n {
                    bad = Some(o.0);
                }
            }
        });
        match bad {
            Some(id) => Err(SnapshotError::Dangling(id)),
            None => Ok(()),
        }
    }

    pub fn restore(self, program: Arc<Program>, config: InterpConfig) -> Machine {
        let interp = Interpreter::with_heap(program, config, Heap::from_objects(self.objects), ObjId(0));
        Machine::from_parts(interp, self.world)
    }

    /// Digest of guest-visible state: the heap graph and the canonical host
    /// state. Equal for equivalent machines regardless of allocation history.
    pub fn state_digest(&self) -> u64 {
        let mut bytes = bincode::serialize(&self.objects).expect("objects serialize");
        bytes.extend_from_slice(self.world.canonical(&describe_compact).as_bytes());
        digest64(&bytes)
    }
}

/// Value text for canonical dumps of compacted images.
pub fn describe_compact(v: &Value) -> String {
    match v {
        Value::Obj(o) => format!("#obj{}", o.0),
        Value::Func(o) => format!("#fn{}", o.0),
        Value::Str(s) => format!("{s:?}"),
        other => other.to_string(),
    }
}
