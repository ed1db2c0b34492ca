//! Basic blocks for structured guest code.
//!
//! Blocks are built from the AST, so block entries and loop headers are
//! syntactic facts. A block ends at a branch (`if`/`while` condition), a
//! `return`, or a statement that may call a guest function; the statement
//! after such a call starts a new block (the call-return continuation).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ast::{Stmt, StmtKind};

pub type BlockId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Block(BlockId),
    /// Leaving the function (implicit `return null`).
    Exit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminator {
    Jump(Target),
    /// Fall-through after a statement that calls into guest code.
    CallReturn(Target),
    /// Conditional branch. For a loop header, `then` enters the loop body.
    Branch {
        then: Target,
        otherwise: Target,
        loop_header: bool,
    },
    Return,
}

impl Terminator {
    pub fn successors(&self) -> Vec<BlockId> {
        let mut out = Vec::new();
        let mut push = |t: &Target| {
            if let Target::Block(b) = t {
                if !out.contains(b) {
                    out.push(*b);
                }
            }
        };
        match self {
            Terminator::Jump(t) | Terminator::CallReturn(t) => push(t),
            Terminator::Branch { then, otherwise, .. } => {
                push(then);
                push(otherwise);
            }
            Terminator::Return => {}
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicBlock {
    pub id: BlockId,
    /// Script-local statement ordinals, in execution order.
    pub stmts: Vec<u32>,
    pub terminator: Terminator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlFlowGraph {
    pub blocks: Vec<BasicBlock>,
    pub entry: BlockId,
    pub back_edges: BTreeSet<(BlockId, BlockId)>,
    pub loop_headers: BTreeSet<BlockId>,
}

impl ControlFlowGraph {
    pub fn successors(&self, b: BlockId) -> Vec<BlockId> {
        self.blocks[b as usize].terminator.successors()
    }

    pub fn edge_count(&self) -> usize {
        self.blocks.iter().map(|b| b.terminator.successors().len()).sum()
    }
}

struct RawBlock {
    stmts: Vec<u32>,
    terminator: Terminator,
}

#[derive(Default)]
struct Builder {
    blocks: Vec<RawBlock>,
}

impl Builder {
    fn push(&mut self, stmts: Vec<u32>, terminator: Terminator) -> Target {
        self.blocks.push(RawBlock { stmts, terminator });
        Target::Block(self.blocks.len() as u32 - 1)
    }

    /// Closes the pending (reversed) statement run into a block.
    fn flush(&mut self, pending: &mut Vec<u32>, term: &mut Option<Terminator>, target: Target) -> Target {
        if pending.is_empty() {
            return target;
        }
        let mut stmts = std::mem::take(pending);
        stmts.reverse();
        let t = term.take().expect("pending run has a terminator");
        self.push(stmts, t)
    }

    fn seq(&mut self, stmts: &[Stmt], next: Target) -> Target {
        let mut target = next;
        let mut pending: Vec<u32> = Vec::new();
        let mut term: Option<Terminator> = None;
        for s in stmts.iter().rev() {
            match &s.kind {
                StmtKind::If(_, then, otherwise) => {
                    target = self.flush(&mut pending, &mut term, target);
                    let t = self.seq(&then.stmts, target);
                    let e = self.seq(&otherwise.stmts, target);
                    pending.push(s.index);
                    term = Some(Terminator::Branch { then: t, otherwise: e, loop_header: false });
                }
                StmtKind::While(_, body) => {
                    target = self.flush(&mut pending, &mut term, target);
                    let header = self.push(vec![s.index], Terminator::Return);
                    let body_entry = self.seq(&body.stmts, header);
                    let Target::Block(h) = header else { unreachable!() };
                    self.blocks[h as usize].terminator =
                        Terminator::Branch { then: body_entry, otherwise: target, loop_header: true };
                    target = header;
                }
                StmtKind::Return(_) => {
                    target = self.flush(&mut pending, &mut term, target);
                    pending.push(s.index);
                    term = Some(Terminator::Return);
                }
                _ if s.contains_call() => {
                    target = self.flush(&mut pending, &mut term, target);
                    pending.push(s.index);
                    term = Some(Terminator::CallReturn(target));
                }
                _ => {
                    if pending.is_empty() {
                        term = Some(Terminator::Jump(target));
                    }
                    pending.push(s.index);
                }
            }
        }
        self.flush(&mut pending, &mut term, target)
    }
}

/// Builds the CFG of a function (or script) body.
pub fn build_cfg(body: &[Stmt]) -> ControlFlowGraph {
    let mut b = Builder::default();
    let entry = match b.seq(body, Target::Exit) {
        Target::Block(id) => id,
        Target::Exit => match b.push(Vec::new(), Terminator::Jump(Target::Exit)) {
            Target::Block(id) => id,
            Target::Exit => unreachable!(),
        },
    };

    // Renumber in source order so ids are stable and readable.
    let mut order: Vec<u32> = (0..b.blocks.len() as u32).collect();
    order.sort_by_key(|&i| b.blocks[i as usize].stmts.first().copied().unwrap_or(u32::MAX));
    let mut remap = vec![0u32; order.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old as usize] = new as u32;
    }
    let fix = |t: Target| match t {
        Target::Block(x) => Target::Block(remap[x as usize]),
        Target::Exit => Target::Exit,
    };
    let mut raw: Vec<Option<RawBlock>> = b.blocks.into_iter().map(Some).collect();
    let blocks: Vec<BasicBlock> = order
        .iter()
        .enumerate()
        .map(|(new, &old)| {
            let rb = raw[old as usize].take().unwrap();
            let terminator = match rb.terminator {
                Terminator::Jump(t) => Terminator::Jump(fix(t)),
                Terminator::CallReturn(t) => Terminator::CallReturn(fix(t)),
                Terminator::Branch { then, otherwise, loop_header } => {
                    Terminator::Branch { then: fix(then), otherwise: fix(otherwise), loop_header }
                }
                Terminator::Return => Terminator::Return,
            };
            BasicBlock { id: new as u32, stmts: rb.stmts, terminator }
        })
        .collect();
    let entry = remap[entry as usize];

    let back_edges = find_back_edges(&blocks, entry);
    let loop_headers = back_edges.iter().map(|&(_, to)| to).collect();
    ControlFlowGraph { blocks, entry, back_edges, loop_headers }
}

/// Depth-first search; an edge into a block still on the DFS stack is a back edge.
fn find_back_edges(blocks: &[BasicBlock], entry: BlockId) -> BTreeSet<(BlockId, BlockId)> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        OnStack,
        Done,
    }
    let mut mark = vec![Mark::New; blocks.len()];
    let mut out = BTreeSet::new();
    let mut stack: Vec<(BlockId, usize)> = vec![(entry, 0)];
    mark[entry as usize] = Mark::OnStack;
    while let Some((b, i)) = stack.pop() {
        let succ = blocks[b as usize].terminator.successors();
        if i < succ.len() {
            stack.push((b, i + 1));
            let s = succ[i];
            match mark[s as usize] {
                Mark::New => {
                    mark[s as usize] = Mark::OnStack;
                    stack.push((s, 0));
                }
                Mark::OnStack => {
                    out.insert((b, s));
                }
                Mark::Done => {}
            }
        } else {
            mark[b as usize] = Mark::Done;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::parser::parse_script;

    fn cfg_of(src: &str) -> ControlFlowGraph {
        let s = parse_script(src, 0, 0).unwrap();
        build_cfg(&s.body.stmts)
    }

    /// Reachability by hand-rolled BFS over successor lists.
    fn reachable(cfg: &ControlFlowGraph) -> usize {
        let mut seen = vec![false; cfg.blocks.len()];
        let mut work = vec![cfg.entry];
        while let Some(b) = work.pop() {
            if std::mem::replace(&mut seen[b as usize], true) {
                continue;
            }
            work.extend(cfg.successors(b));
        }
        seen.iter().filter(|s| **s).count()
    }

    #[test]
    fn straight_line_is_one_block() {
        let cfg = cfg_of("let a = 1; let b = 2; a = a + b;");
        assert_eq!(cfg.blocks.len(), 1);
        assert_eq!(cfg.blocks[0].stmts, vec![0, 1, 2]);
        assert!(cfg.back_edges.is_empty());
    }

    #[test]
    fn while_loop_shape() {
        // header [0], body [1], exit [2]; edges: 0->1, 0->2, 1->0 (back)
        let cfg = cfg_of("while (c) { s1 = 1; } s2 = 2;");
        assert_eq!(cfg.blocks.len(), 3);
        assert_eq!(cfg.blocks[0].stmts, vec![0]);
        assert_eq!(cfg.blocks[1].stmts, vec![1]);
        assert_eq!(cfg.blocks[2].stmts, vec![2]);
        assert_eq!(cfg.successors(0), vec![1, 2]);
        assert_eq!(cfg.successors(1), vec![0]);
        assert_eq!(cfg.back_edges.iter().copied().collect::<Vec<_>>(), vec![(1, 0)]);
        assert_eq!(cfg.loop_headers.iter().copied().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn if_else_shape() {
        let cfg = cfg_of("if (c) { a = 1; } else { b = 2; } d = 3;");
        assert_eq!(cfg.blocks.len(), 4);
        assert_eq!(cfg.successors(cfg.entry).len(), 2);
        assert!(cfg.back_edges.is_empty());
        assert_eq!(cfg.successors(1), vec![3]);
        assert_eq!(cfg.successors(2), vec![3]);
    }

    #[test]
    fn empty_infinite_loop_has_self_back_edge() {
        let s = parse_script("function a(){while(true){}}", 0, 0).unwrap();
        let cfg = build_cfg(&s.functions[0].body.stmts);
        assert_eq!(cfg.blocks.len(), 1);
        assert_eq!(cfg.loop_headers.len(), 1);
        assert_eq!(cfg.back_edges.iter().copied().collect::<Vec<_>>(), vec![(0, 0)]);
    }

    #[test]
    fn calls_end_blocks() {
        let cfg = cfg_of("let a = 1; f(a); let b = 2; let c = 3;");
        assert_eq!(cfg.blocks.len(), 2);
        assert_eq!(cfg.blocks[0].stmts, vec![0, 1]);
        assert!(matches!(cfg.blocks[0].terminator, Terminator::CallReturn(Target::Block(1))));
        assert_eq!(cfg.blocks[1].stmts, vec![2, 3]);
    }

    #[test]
    fn nested_loops_every_block_reachable() {
        let cfg = cfg_of(
            "let i = 0; while (i < 3) { let j = 0; while (j < i) { j = j + 1; } if (i == 1) { x = 1; } i = i + 1; } done = 1;",
        );
        assert_eq!(reachable(&cfg), cfg.blocks.len());
        assert_eq!(cfg.loop_headers.len(), 2);
        assert_eq!(cfg.back_edges.len(), 2);
        for &(_, to) in &cfg.back_edges {
            assert!(cfg.loop_headers.contains(&to));
        }
    }

    #[test]
    fn empty_body_has_single_entry_block() {
        let cfg = cfg_of("");
        assert_eq!(cfg.blocks.len(), 1);
        assert!(cfg.blocks[0].stmts.is_empty());
    }
}
