use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::guest::Value;

pub type NodeId = u32;

pub const ROOT: NodeId = 0;
pub const DOCUMENT_TAG: &str = "#document";
pub const TEXT_TAG: &str = "#text";

/// A registered callback. Attribute-style handlers (`onclick="name"`) are
/// resolved by global name when the event is dispatched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Callback {
    Func(Value),
    Global(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Listener {
    pub event: String,
    pub callback: Callback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LoadState {
    Pending,
    Loaded { width: u32, height: u32, bytes: u64 },
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalResource {
    pub url: String,
    pub state: LoadState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomNode {
    pub id: NodeId,
    pub tag: String,
    pub attrs: IndexMap<String, String>,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
    pub listeners: Vec<Listener>,
    pub resource: Option<ExternalResource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomTree {
    nodes: BTreeMap<NodeId, DomNode>,
    next_id: NodeId,
}

impl Default for DomTree {
    fn default() -> Self {
        Self::new()
    }
}

impl DomTree {
    pub fn new() -> Self {
        let mut t = DomTree { nodes: BTreeMap::new(), next_id: ROOT };
        t.create("#root");
        t
    }

    pub fn create(&mut self, tag: &str) -> NodeId {
        let id = self.next_id;
        self.next_id += 1;
        self.nodes.insert(
            id,
            DomNode {
                id,
                tag: tag.to_string(),
                attrs: IndexMap::new(),
                children: Vec::new(),
                parent: None,
                listeners: Vec::new(),
                resource: None,
            },
        );
        id
    }

    pub fn get(&self, id: NodeId) -> Option<&DomNode> {
        self.nodes.get(&id)
    }

    pub fn get_mut(&mut self, id: NodeId) -> Option<&mut DomNode> {
        self.nodes.get_mut(&id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &DomNode> {
        self.nodes.values()
    }

    pub fn nodes_mut(&mut self) -> impl Iterator<Item = &mut DomNode> {
        self.nodes.values_mut()
    }

    pub fn is_ancestor(&self, a: NodeId, mut b: NodeId) -> bool {
        loop {
            if a == b {
                return true;
            }
            match self.nodes.get(&b).and_then(|n| n.parent) {
                Some(p) => b = p,
                None => return false,
            }
        }
    }

    /// Attached to the root.
    pub fn is_connected(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id) && self.is_ancestor(ROOT, id)
    }

    pub fn append(&mut self, parent: NodeId, child: NodeId) -> Result<(), String> {
        if !self.nodes.contains_key(&parent) || !self.nodes.contains_key(&child) {
            return Err("unknown node".into());
        }
        if child == ROOT || self.is_ancestor(child, parent) {
            return Err("append would create a cycle".into());
        }
        self.detach(child);
        self.nodes.get_mut(&parent).unwrap().children.push(child);
        self.nodes.get_mut(&child).unwrap().parent = Some(parent);
        Ok(())
    }

    pub fn remove(&mut self, parent: NodeId, child: NodeId) -> Result<(), String> {
        match self.nodes.get(&child) {
            Some(n) if n.parent == Some(parent) => {
                self.detach(child);
                Ok(())
            }
            Some(_) => Err("node is not a child of the given parent".into()),
            None => Err("unknown node".into()),
        }
    }

    fn detach(&mut self, child: NodeId) {
        if let Some(p) = self.nodes.get_mut(&child).and_then(|n| n.parent.take()) {
            if let Some(pn) = self.nodes.get_mut(&p) {
                pn.children.retain(|&c| c != child);
            }
        }
    }

    /// Pre-order walk of the connected tree.
    pub fn preorder(&self) -> Vec<(NodeId, usize)> {
        let mut out = Vec::new();
        let mut stack = vec![(ROOT, 0usize)];
        while let Some((id, depth)) = stack.pop() {
            out.push((id, depth));
            if let Some(n) = self.nodes.get(&id) {
                for &c in n.children.iter().rev() {
                    stack.push((c, depth + 1));
                }
            }
        }
        out
    }

    /// `#id`, `document:name`, or a tag name; first connected match in pre-order.
    pub fn query(&self, selector: &str) -> Option<NodeId> {
        let pred: Box<dyn Fn(&DomNode) -> bool> = if let Some(id) = selector.strip_prefix('#') {
            Box::new(move |n| n.attrs.get("id").map(String::as_str) == Some(id))
        } else if let Some(name) = selector.strip_prefix("document:") {
            Box::new(move |n| n.tag == DOCUMENT_TAG && n.attrs.get("name").map(String::as_str) == Some(name))
        } else {
            Box::new(move |n| n.tag == selector)
        };
        self.preorder().into_iter().map(|(id, _)| id).find(|id| pred(&self.nodes[id]))
    }

    /// Canonical text rendering: pre-order, attributes sorted by name.
    pub fn render(&self, describe: &dyn Fn(&Callback) -> String) -> String {
        let mut out = String::new();
        for (id, depth) in self.preorder() {
            let n = &self.nodes[&id];
            out.push_str(&"  ".repeat(depth));
            out.push_str(&n.tag);
            let mut attrs: Vec<_> = n.attrs.iter().collect();
            attrs.sort();
            for (k, v) in attrs {
                out.push_str(&format!(" {k}={v:?}"));
            }
            for l in &n.listeners {
                out.push_str(&format!(" [{}:{}]", l.event, describe(&l.callback)));
            }
            if let Some(r) = &n.resource {
                match &r.state {
                    LoadState::Pending => out.push_str(&format!(" <{} pending>", r.url)),
                    LoadState::Loaded { width, height, bytes } => {
                        out.push_str(&format!(" <{} {width}x{height} {bytes}b>", r.url))
                    }
                    LoadState::Failed => out.push_str(&format!(" <{} failed>", r.url)),
                }
            }
            out.push('\n');
        }
        out
    }
}
