//! The on-disk trace format.
//!
//! ```text
//! "TTDT" u32 version u32 flags u64 scenario-hash
//! section header      (u64 length, bytes)
//! section log
//! section summaries
//! u32 checkpoint count, then per checkpoint: section meta, section image
//! u64 checksum of everything before it
//! ```
//!
//! With the compression flag every section is deflated on its own, so a
//! single checkpoint can be inflated without touching the others.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Checkpoint, EventSummary, LogEntry, Trace, TraceEnd};
use crate::guest::ScriptSource;
use crate::machine::digest64;

pub const MAGIC: &[u8; 4] = b"TTDT";
pub const VERSION: u32 = 1;
const FLAG_COMPRESSED: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceFileError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a trace file")]
    BadMagic,
    #[error("unsupported trace version {0}")]
    UnsupportedVersion(u32),
    #[error("trace file is truncated")]
    Truncated,
    #[error("trace checksum mismatch (stored {stored:016x}, computed {computed:016x})")]
    Checksum { stored: u64, computed: u64 },
    #[error("corrupt {section} section: {message}")]
    Corrupt { section: &'static str, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraceSizes {
    pub total: u64,
    pub log: u64,
    pub checkpoints: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    program: Vec<ScriptSource>,
    seed: u64,
    checkpoint_interval: u64,
    end: TraceEnd,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    event_index: u64,
    log_pos: u64,
    clock: u64,
    interactions: u64,
    live_objects: u64,
}

fn pack(out: &mut Vec<u8>, bytes: &[u8], compress: bool) -> u64 {
    let body = if compress {
        let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).expect("in-memory write");
        enc.finish().expect("in-memory write")
    } else {
        bytes.to_vec()
    };
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    8 + body.len() as u64
}

pub fn encode_trace(trace: &Trace, compress: bool) -> (Vec<u8>, TraceSizes) {
    let mut out = Vec::new();
    let mut sizes = TraceSizes::default();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(if compress { FLAG_COMPRESSED } else { 0 }).to_le_bytes());
    out.extend_from_slice(&trace.scenario_hash.to_le_bytes());
    let header = Header {
        program: trace.program.clone(),
        seed: trace.seed,
        checkpoint_interval: trace.checkpoint_interval,
        end: trace.end.clone(),
    };
    pack(&mut out, &bincode::serialize(&header).unwrap(), compress);
    sizes.log = pack(&mut out, &bincode::serialize(&trace.log).unwrap(), compress);
    pack(&mut out, &bincode::serialize(&trace.summaries).unwrap(), compress);
    out.extend_from_slice(&(trace.checkpoints.len() as u32).to_le_bytes());
    for c in &trace.checkpoints {
        let meta = CheckpointMeta {
            event_index: c.event_index,
            log_pos: c.log_pos,
            clock: c.clock,
            interactions: c.interactions,
            live_objects: c.live_objects,
        };
        sizes.checkpoints += pack(&mut out, &bincode::serialize(&meta).unwrap(), compress);
        sizes.checkpoints += pack(&mut out, &c.image, compress);
    }
    let sum = digest64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    sizes.total = out.len() as u64;
    (out, sizes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    compressed: bool,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TraceFileError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(TraceFileError::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TraceFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TraceFileError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn section(&mut self, name: &'static str) -> Result<Vec<u8>, TraceFileError> {
        let len = self.u64()?;
        let body = self.take(usize::try_from(len).map_err(|_| TraceFileError::Truncated)?)?;
        if !self.compressed {
            return Ok(body.to_vec());
        }
        let mut out = Vec::new();
        DeflateDecoder::new(body)
            .read_to_end(&mut out)
            .map_err(|e| TraceFileError::Corrupt { section: name, message: e.to_string() })?;
        Ok(out)
    }
}

fn decode<'de, T: Deserialize<'de>>(bytes: &'de [u8], section: &'static str) -> Result<T, TraceFileError> {
    bincode::deserialize(bytes).map_err(|e| TraceFileError::Corrupt { section, message: e.to_string() })
}

pub fn decode_trace(bytes: &[u8]) -> Result<Trace, TraceFileError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(TraceFileError::BadMagic);
    }
    if bytes.len() < 28 {
        return Err(TraceFileError::Truncated);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(TraceFileError::UnsupportedVersion(version));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = digest64(body);
    if stored != computed {
        return Err(TraceFileError::Checksum { stored, computed });
    }
    let mut c = Cursor { bytes: body, pos: 8, compressed: false };
    c.compressed = c.u32()? & FLAG_COMPRESSED != 0;
    let scenario_hash = c.u64()?;
    let header: Header = decode(&c.section("header")?, "header")?;
    let log: Vec<LogEntry> = decode(&c.section("log")?, "log")?;
    let summaries: Vec<EventSummary> = decode(&c.section("summary")?, "summary")?;
    let n = c.u32()?;
    let mut checkpoints = Vec::with_capacity(n.min(1 << 16) as usize);
    for _ in 0..n {
        let meta: CheckpointMeta = decode(&c.section("checkpoint")?, "checkpoint")?;
        let image = c.section("checkpoint")?;
        checkpoints.push(Checkpoint {
            event_index: meta.event_index,
            log_pos: meta.log_pos,
            clock: meta.clock,
            interactions: meta.interactions,
            live_objects: meta.live_objects,
            image: Arc::new(image),
        });
    }
    if c.pos != body.len() {
        return Err(TraceFileError::Corrupt {
            section: "trailer",
            message: "unexpected bytes after checkpoints".into(),
        });
    }
    if checkpoints.first().is_none_or(|c| c.event_index != 0 || c.log_pos != 0) {
        return Err(TraceFileError::Corrupt { section: "checkpoint", message: "missing initial checkpoint".into() });
    }
    Ok(Trace {
        program: header.program,
        scenario_hash,
        seed: header.seed,
        checkpoint_interval: header.checkpoint_interval,
        log,
        checkpoints,
        summaries,
        end: header.end,
    })
}

pub fn write_trace(path: &Path, trace: &Trace, compress: bool) -> Result<TraceSizes, TraceFileError> {
    let (bytes, sizes) = encode_trace(trace, compress);
    std::fs::write(path, bytes)?;
    Ok(sizes)
}

pub fn read_trace(path: &Path) -> Result<Trace, TraceFileError> {
    decode_trace(&std::fs::read(path)?)
}
