//! Per-slot event log, one JSON object per line.
//!
//! Schema version 1: `{"v":1,"episode":E,"seed":S,"info":StepInfo}` where
//! `info` carries the slot, its opening arrivals, positions, association,
//! decoded decisions, penalty events, the service outcome, the energy row
//! and the reward inputs and terms. Floats round-trip exactly.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::env::StepInfo;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub v: u32,
    pub episode: u64,
    pub seed: u64,
    pub info: StepInfo,
}

impl SlotRecord {
    pub fn new(episode: u64, seed: u64, info: StepInfo) -> Self {
        Self { v: SCHEMA_VERSION, episode, seed, info }
    }
}

pub struct EventWriter<W: Write> {
    out: W,
}

impl<W: Write> EventWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, record: &SlotRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Reads every record, rejecting unknown schema versions.
pub fn read_events<R: BufRead>(input: R) -> io::Result<Vec<SlotRecord>> {
    let mut records = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SlotRecord = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
        if record.v != SCHEMA_VERSION {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("line {}: schema version {}", n + 1, record.v)));
        }
        records.push(record);
    }
    Ok(records)
}
