use std::sync::Arc;

use crate::record::{Snapshot, SnapshotError, Trace};

pub const DEFAULT_CACHE_CAPACITY: usize = 64;

#[derive(Debug)]
struct Entry {
    event_index: u64,
    log_pos: usize,
    /// Decoded on first use for recorded checkpoints.
    snapshot: Option<Arc<Snapshot>>,
    recorded: Option<usize>,
    last_used: u64,
}

/// Recorded checkpoints plus a bounded LRU set of opportunistic ones.
/// Recorded checkpoints are never evicted.
#[derive(Debug)]
pub struct CheckpointCache {
    entries: Vec<Entry>,
    capacity: usize,
    tick: u64,
}

impl CheckpointCache {
    pub fn new(trace: &Trace, capacity: usize) -> Self {
        let entries = trace
            .checkpoints
            .iter()
            .enumerate()
            .map(|(i, c)| Entry {
                event_index: c.event_index,
                log_pos: c.log_pos as usize,
                snapshot: None,
                recorded: Some(i),
                last_used: 0,
            })
            .collect();
        CheckpointCache { entries, capacity, tick: 0 }
    }

    /// Nearest checkpoint at or before `event`; opportunistic ones win ties.
    pub fn best(&mut self, trace: &Trace, event: u64) -> Result<(Snapshot, u64, usize), SnapshotError> {
        self.tick += 1;
        let i = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.event_index <= event)
            .max_by_key(|(_, e)| (e.event_index, e.recorded.is_none(), e.log_pos))
            .map(|(i, _)| i)
            .expect("checkpoint 0 covers every event");
        let e = &mut self.entries[i];
        e.last_used = self.tick;
        if e.snapshot.is_none() {
            let k = e.recorded.expect("opportunistic entries hold their image");
            e.snapshot = Some(Arc::new(trace.checkpoints[k].snapshot()?));
        }
        Ok(((**e.snapshot.as_ref().unwrap()).clone(), e.event_index, e.log_pos))
    }

    pub fn insert(&mut self, event_index: u64, log_pos: usize, snapshot: Snapshot) {
        self.tick += 1;
        if let Some(e) = self.entries.iter_mut().find(|e| e.recorded.is_none() && e.event_index == event_index) {
            e.last_used = self.tick;
            return;
        }
        self.entries.push(Entry {
            event_index,
            log_pos,
            snapshot: Some(Arc::new(snapshot)),
            recorded: None,
            last_used: self.tick,
        });
        while self.opportunistic_len() > self.capacity {
            let victim = self
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| e.recorded.is_none())
                .min_by_key(|(_, e)| e.last_used)
                .map(|(i, _)| i)
                .unwrap();
            self.entries.remove(victim);
        }
    }

    pub fn opportunistic_len(&self) -> usize {
        self.entries.iter().filter(|e| e.recorded.is_none()).count()
    }

    /// Event indexes of opportunistic checkpoints, ascending.
    pub fn opportunistic_events(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.entries.iter().filter(|e| e.recorded.is_none()).map(|e| e.event_index).collect();
        v.sort();
        v
    }
}
