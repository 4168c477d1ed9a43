//! Declarative eBPF programs: predicate -> helper-sequence rules over
//! syscall event contexts, plus the native XDP forwarder body.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::hook::{HookPoint, Phase, Syscall};
use super::map::MapDef;
use crate::kernel::container::ContainerId;
use crate::kernel::process::Comm;

/// The helper surface. Order here is the canonical order used for
/// deterministic policy deny reasons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HelperName {
    GetCurrentPidTgid,
    GetCurrentUidGid,
    GetCurrentComm,
    SendSignal,
    ProbeReadUser,
    ProbeReadUserStr,
    ProbeWriteUser,
    OverrideReturn,
    MapUpdate,
    MapLookup,
    MapDelete,
    EmitRecord,
}

impl HelperName {
    pub fn canonical(self) -> &'static str {
        match self {
            HelperName::GetCurrentPidTgid => "get_current_pid_tgid",
            HelperName::GetCurrentUidGid => "get_current_uid_gid",
            HelperName::GetCurrentComm => "get_current_comm",
            HelperName::SendSignal => "send_signal",
            HelperName::ProbeReadUser => "probe_read_user",
            HelperName::ProbeReadUserStr => "probe_read_user_str",
            HelperName::ProbeWriteUser => "probe_write_user",
            HelperName::OverrideReturn => "override_return",
            HelperName::MapUpdate => "map_update",
            HelperName::MapLookup => "map_lookup",
            HelperName::MapDelete => "map_delete",
            HelperName::EmitRecord => "emit_record",
        }
    }

    pub fn all() -> &'static [HelperName] {
        &[
            HelperName::GetCurrentPidTgid,
            HelperName::GetCurrentUidGid,
            HelperName::GetCurrentComm,
            HelperName::SendSignal,
            HelperName::ProbeReadUser,
            HelperName::ProbeReadUserStr,
            HelperName::ProbeWriteUser,
            HelperName::OverrideReturn,
            HelperName::MapUpdate,
            HelperName::MapLookup,
            HelperName::MapDelete,
            HelperName::EmitRecord,
        ]
    }

    pub fn parse(s: &str) -> Option<Self> {
        HelperName::all().iter().copied().find(|h| h.canonical() == s)
    }
}

impl fmt::Display for HelperName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical())
    }
}

/// Classification tag an emitted record carries on the attacker channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    ProcessInfo,
    FileContent,
    KillReport,
    InjectionReport,
}

impl RecordKind {
    pub fn name(self) -> &'static str {
        match self {
            RecordKind::ProcessInfo => "process_info",
            RecordKind::FileContent => "file_content",
            RecordKind::KillReport => "kill_report",
            RecordKind::InjectionReport => "injection_report",
        }
    }
}

/// Pure predicate conditions over an event context. A rule's `when` is the
/// conjunction of its conditions.
#[derive(Debug, Clone, PartialEq)]
pub enum Cond {
    CommEquals(String),
    CommContains(String),
    SyscallIs(Syscall),
    FilenameEndsWith(String),
    /// Current pid present as a u32 key in the named program map.
    PidInMap(String),
    PhaseIs(Phase),
}

/// Key binding for map helpers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyBind {
    Pid,
    Comm,
    Lit(u64),
}

/// Value binding for map_update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueBind {
    Lit(u64),
    /// Address token of the context's user buffer.
    BufferAddr,
}

/// Length binding for probe_read_user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LenBind {
    Lit(u64),
    /// The syscall's natural return value (exit phase only).
    NaturalRetval,
}

/// Target buffer of probe_write_user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufTarget {
    /// The context's own user buffer.
    Ctx,
    /// Address saved earlier: the u64 produced by the previous helper
    /// (typically a map_lookup of a stored buffer address).
    SavedAddr,
}

/// One field of an emitted record.
#[derive(Debug, Clone, PartialEq)]
pub enum EmitField {
    Pid,
    UidGid,
    Comm,
    SyscallName,
    /// Raw bytes produced by the previous helper (probe reads, lookups).
    LastBytes,
    Lit(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum HelperCall {
    GetCurrentPidTgid,
    GetCurrentUidGid,
    GetCurrentComm,
    SendSignal { signo: i32 },
    ProbeReadUser { len: LenBind },
    ProbeReadUserStr,
    ProbeWriteUser { target: BufTarget, payload: Vec<u8> },
    OverrideReturn { value: i64 },
    MapUpdate { map: String, key: KeyBind, value: ValueBind },
    MapLookup { map: String, key: KeyBind },
    MapDelete { map: String, key: KeyBind },
    EmitRecord { kind: RecordKind, fields: Vec<EmitField> },
}

impl HelperCall {
    pub fn name(&self) -> HelperName {
        match self {
            HelperCall::GetCurrentPidTgid => HelperName::GetCurrentPidTgid,
            HelperCall::GetCurrentUidGid => HelperName::GetCurrentUidGid,
            HelperCall::GetCurrentComm => HelperName::GetCurrentComm,
            HelperCall::SendSignal { .. } => HelperName::SendSignal,
            HelperCall::ProbeReadUser { .. } => HelperName::ProbeReadUser,
            HelperCall::ProbeReadUserStr => HelperName::ProbeReadUserStr,
            HelperCall::ProbeWriteUser { .. } => HelperName::ProbeWriteUser,
            HelperCall::OverrideReturn { .. } => HelperName::OverrideReturn,
            HelperCall::MapUpdate { .. } => HelperName::MapUpdate,
            HelperCall::MapLookup { .. } => HelperName::MapLookup,
            HelperCall::MapDelete { .. } => HelperName::MapDelete,
            HelperCall::EmitRecord { .. } => HelperName::EmitRecord,
        }
    }

    pub fn map_ref(&self) -> Option<&str> {
        match self {
            HelperCall::MapUpdate { map, .. }
            | HelperCall::MapLookup { map, .. }
            | HelperCall::MapDelete { map, .. } => Some(map),
            _ => None,
        }
    }
}

/// What dispatch does after a rule whose predicate matched has run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleOutcome {
    #[default]
    Continue,
    /// Skip the remaining rules of this program for this event.
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub when: Vec<Cond>,
    pub actions: Vec<HelperCall>,
    pub then: RuleOutcome,
}

impl Rule {
    pub fn new(when: Vec<Cond>, actions: Vec<HelperCall>) -> Self {
        Rule {
            when,
            actions,
            then: RuleOutcome::Continue,
        }
    }
}

/// Program body: either a declarative rule list or the native XDP forwarder
/// (the driver-level parse/lookup/forward path, which still loads and
/// attaches through the same gate as everything else).
#[derive(Debug, Clone, PartialEq)]
pub enum ProgramBody {
    Rules(Vec<Rule>),
    XdpForwarder { session_map: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbpfProgram {
    pub id: String,
    pub owner: ContainerId,
    pub hook: HookPoint,
    pub body: ProgramBody,
    /// Helpers the program claims to use. The verifier recomputes the set
    /// from the body and rejects a mismatch.
    pub declared_helpers: BTreeSet<HelperName>,
    pub maps: Vec<MapDef>,
}

impl EbpfProgram {
    pub fn rules(&self) -> &[Rule] {
        match &self.body {
            ProgramBody::Rules(rules) => rules,
            ProgramBody::XdpForwarder { .. } => &[],
        }
    }

    /// Helper set statically derivable from the body.
    pub fn computed_helpers(&self) -> BTreeSet<HelperName> {
        match &self.body {
            ProgramBody::Rules(rules) => rules
                .iter()
                .flat_map(|r| r.actions.iter().map(HelperCall::name))
                .collect(),
            ProgramBody::XdpForwarder { .. } => [HelperName::MapLookup].into_iter().collect(),
        }
    }
}

/// Syscall arguments visible to hooks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CtxArgs {
    pub fd: Option<i32>,
    pub count: Option<usize>,
    /// Filename argument of openat/execve.
    pub filename: Option<String>,
}

/// Event context handed to programs on dispatch.
#[derive(Debug, Clone, PartialEq)]
pub struct EventContext {
    pub pid: u32,
    pub tgid: u32,
    pub uid: u32,
    pub gid: u32,
    pub comm: Comm,
    pub container: ContainerId,
    pub syscall: Syscall,
    pub phase: Phase,
    pub args: CtxArgs,
    /// Address token of the syscall's user buffer, if it has one.
    pub buffer: Option<u64>,
    /// Natural return value; present in the exit phase only.
    pub natural_retval: Option<i64>,
    /// Per-run syscall instance id, for log matching.
    pub sid: u64,
}

impl EventContext {
    pub fn pid_tgid_packed(&self) -> u64 {
        ((self.tgid as u64) << 32) | self.pid as u64
    }

    pub fn uid_gid_packed(&self) -> u64 {
        ((self.gid as u64) << 32) | self.uid as u64
    }
}
