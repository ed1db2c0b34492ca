//! Where a reverse step lands, computed from the branch trace store and the
//! live frames' logical times.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::guest::{BranchRecord, EdgeKind, FrameView, LogicalTime, Program, StmtId, StmtInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameHint {
    SameFrame,
    Caller,
    /// A frame that has since returned.
    Callee,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTarget {
    pub stmt: StmtId,
    pub time: LogicalTime,
    pub frame_hint: FrameHint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    Target(StepTarget),
    /// The paused statement is the first of its event.
    EventStart,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("inconsistent monitor state: {0}")]
pub struct InconsistentStores(pub String);

/// `frames` is the timestamp store: live frames outermost first, the last
/// one paused at `at`.
pub fn resolve_step_back(
    program: &Program,
    at: StmtInstance,
    bts: &HashMap<StmtId, BranchRecord>,
    frames: &[FrameView],
) -> Result<Resolution, InconsistentStores> {
    let meta = program.stmt(at.stmt);
    if !meta.is_block_entry() {
        let prev = program.prev_in_block(at.stmt).expect("not a block entry");
        return Ok(Resolution::Target(StepTarget { stmt: prev, time: at.time, frame_hint: FrameHint::SameFrame }));
    }
    let rec = bts
        .get(&at.stmt)
        .ok_or_else(|| InconsistentStores(format!("no branch record for block entry {}", program.describe(at.stmt))))?;
    let Some(src) = rec.source else { return Ok(Resolution::EventStart) };
    let caller = frames.len().checked_sub(2).map(|i| &frames[i]);
    let target = if src.frame == at.frame {
        let time = if program.stmt(src.stmt).loop_header && rec.edge == EdgeKind::LoopEntry {
            let b = at.time.back_jumps.checked_sub(1).ok_or_else(|| {
                InconsistentStores(format!("loop entry at {} with no iterations", program.describe(at.stmt)))
            })?;
            LogicalTime::new(at.time.call_count, b)
        } else {
            at.time
        };
        StepTarget { stmt: src.stmt, time, frame_hint: FrameHint::SameFrame }
    } else if caller.is_some_and(|c| c.serial == src.frame) {
        StepTarget { stmt: src.stmt, time: caller.unwrap().time, frame_hint: FrameHint::Caller }
    } else {
        StepTarget { stmt: src.stmt, time: src.time, frame_hint: FrameHint::Callee }
    };
    Ok(Resolution::Target(target))
}
