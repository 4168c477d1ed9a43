//! Run event log: newline-delimited JSON, one object per event.
//!
//! Field order is fixed by the struct declaration (`tick`, `kind`, `pid`,
//! `container`, `detail`) so two runs of the same scenario and seed compare
//! byte for byte. The `detail` field is a flat `key=value` string; the replay
//! verifier parses the keys it audits and ignores the rest.

use serde::{Deserialize, Serialize};

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Meta,
    MetaPolicy,
    ContainerCreate,
    Spawn,
    SyscallEnter,
    SyscallExit,
    Signal,
    ProcExit,
    Orchestrator,
    PfcpInstall,
    XdpVerdict,
    PktUnhandled,
    EbpfLoad,
    EbpfAttach,
    Helper,
    Exfil,
    ExecCmd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub tick: u64,
    pub kind: EventKind,
    /// 0 when the event is not tied to a process.
    pub pid: u32,
    /// Owning container id, or "" for host-level events.
    pub container: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct EventLog {
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    pub fn push(&mut self, rec: EventRecord) {
        self.records.push(rec);
    }

    pub fn emit(&mut self, tick: u64, kind: EventKind, pid: u32, container: &str, detail: String) {
        self.records.push(EventRecord {
            tick,
            kind,
            pid,
            container: container.to_string(),
            detail,
        });
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn iter_kind(&self, kind: EventKind) -> impl Iterator<Item = &EventRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    /// Serialize as NDJSON. Stable byte output for fixed input.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            // EventRecord contains no map types, so serialization cannot fail.
            out.push_str(&serde_json::to_string(rec).expect("event record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Extract the value of a `key=value` token from a detail string.
pub fn detail_field<'a>(detail: &'a str, key: &str) -> Option<&'a str> {
    detail.split(' ').find_map(|tok| {
        let (k, v) = tok.split_once('=')?;
        (k == key).then_some(v)
    })
}
