//! Append-only, hash-chained event log.
//!
//! One JSON object per line. Each record carries the SHA-256 digest of its
//! payload and of its own body, and the body includes the previous record's
//! digest, so any edited byte breaks the chain at that record.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::{ProcessId, Tick};

pub const GENESIS_DIGEST: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Protocol,
    Ledger,
    Sim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub seq: u64,
    pub tick: Tick,
    pub process: Option<ProcessId>,
    pub kind: RecordKind,
    pub op: String,
    pub payload: serde_json::Value,
    pub payload_digest: String,
    pub phase: Option<String>,
    pub prev: String,
    pub digest: String,
}

#[derive(Serialize)]
struct Body<'a> {
    seq: u64,
    tick: Tick,
    process: Option<ProcessId>,
    kind: RecordKind,
    op: &'a str,
    payload_digest: &'a str,
    phase: Option<&'a str>,
    prev: &'a str,
}

impl EventRecord {
    fn body_digest(&self) -> String {
        let body = Body {
            seq: self.seq,
            tick: self.tick,
            process: self.process,
            kind: self.kind,
            op: &self.op,
            payload_digest: &self.payload_digest,
            phase: self.phase.as_deref(),
            prev: &self.prev,
        };
        sha256_hex(&serde_json::to_vec(&body).expect("record body serializes"))
    }

    pub fn payload_as<T: serde::de::DeserializeOwned>(&self) -> serde_json::Result<T> {
        T::deserialize(&self.payload)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn payload_digest(payload: &serde_json::Value) -> String {
    sha256_hex(&serde_json::to_vec(payload).expect("payload serializes"))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("record {index}: unreadable ({message})")]
    Parse { index: usize, message: String },
    #[error("record {index}: sequence number {found}, expected {index}")]
    Sequence { index: usize, found: u64 },
    #[error("record {index}: payload digest mismatch")]
    PayloadDigest { index: usize },
    #[error("record {index}: previous-digest link broken")]
    Chain { index: usize },
    #[error("record {index}: record digest mismatch")]
    Digest { index: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

impl LogError {
    /// Index of the first bad record, if the error names one.
    pub fn record_index(&self) -> Option<usize> {
        match self {
            LogError::Parse { index, .. }
            | LogError::Sequence { index, .. }
            | LogError::PayloadDigest { index }
            | LogError::Chain { index }
            | LogError::Digest { index } => Some(*index),
            LogError::Io(_) => None,
        }
    }
}

/// In-memory log. A disabled log accepts appends and records nothing, which
/// keeps throwaway Monte Carlo episodes cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    enabled: bool,
    records: Vec<EventRecord>,
    head: String,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new()
    }
}

impl EventLog {
    pub fn new() -> Self {
        EventLog {
            enabled: true,
            records: Vec::new(),
            head: GENESIS_DIGEST.to_string(),
        }
    }

    pub fn disabled() -> Self {
        EventLog {
            enabled: false,
            ..Self::new()
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn head(&self) -> &str {
        &self.head
    }

    pub fn append<P: Serialize>(
        &mut self,
        tick: Tick,
        process: Option<ProcessId>,
        kind: RecordKind,
        op: &str,
        payload: &P,
        phase: Option<String>,
    ) {
        if !self.enabled {
            return;
        }
        let payload = serde_json::to_value(payload).expect("payload serializes");
        let mut record = EventRecord {
            seq: self.records.len() as u64,
            tick,
            process,
            kind,
            op: op.to_string(),
            payload_digest: payload_digest(&payload),
            payload,
            phase,
            prev: self.head.clone(),
            digest: String::new(),
        };
        record.digest = record.body_digest();
        self.head = record.digest.clone();
        self.records.push(record);
    }

    pub fn lines(&self) -> impl Iterator<Item = String> + '_ {
        self.records.iter().map(EventRecord::to_line)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }
}

/// Parses and verifies a serialized log, returning its records. Fails at the
/// first record whose payload digest, body digest, sequence number or chain
/// link does not check out.
pub fn verify_bytes(bytes: &[u8]) -> Result<Vec<EventRecord>, LogError> {
    let mut records = Vec::new();
    let mut head = GENESIS_DIGEST.to_string();
    let lines: Vec<&[u8]> = bytes.split(|b| *b == b'\n').collect();
    let last = lines.len() - 1;
    for (index, line) in lines.into_iter().enumerate() {
        // Only the empty tail after the final newline is tolerated; blank
        // lines in the middle are corruption.
        if index == last && line.is_empty() {
            continue;
        }
        let record: EventRecord = serde_json::from_slice(line).map_err(|e| LogError::Parse {
            index,
            message: e.to_string(),
        })?;
        if record.seq != index as u64 {
            return Err(LogError::Sequence {
                index,
                found: record.seq,
            });
        }
        if payload_digest(&record.payload) != record.payload_digest {
            return Err(LogError::PayloadDigest { index });
        }
        if record.prev != head {
            return Err(LogError::Chain { index });
        }
        if record.body_digest() != record.digest {
            return Err(LogError::Digest { index });
        }
        head = record.digest.clone();
        records.push(record);
    }
    Ok(records)
}

pub fn read_and_verify<R: BufRead>(mut reader: R) -> Result<Vec<EventRecord>, LogError> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| LogError::Io(e.to_string()))?;
    verify_bytes(&bytes)
}
