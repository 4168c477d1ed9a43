//! The four cross-container attack scenarios as program builders, plus the
//! victim workloads they exploit.
//!
//! Each builder returns the group of sibling programs one malicious object
//! would carry: multi-hook attacks (information theft, bash injection) split
//! into one program per hook, sharing their maps through the owner's pinned
//! map namespace.

use serde::{Deserialize, Serialize};

use crate::ebpf::hook::{HookPoint, Syscall};
use crate::ebpf::map::{KeyType, MapDef, ValueType};
use crate::ebpf::program::{
    BufTarget, Cond, EbpfProgram, EmitField, HelperCall, KeyBind, LenBind, ProgramBody,
    RecordKind, Rule, ValueBind,
};
use crate::kernel::container::ContainerId;
use crate::kernel::workload::{Repeat, Step, Workload};

pub use crate::ebpf::runtime::ExfilRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Tracing,
    Dos,
    InfoTheft,
    BashInjection,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Tracing => "tracing",
            AttackKind::Dos => "dos",
            AttackKind::InfoTheft => "info-theft",
            AttackKind::BashInjection => "bash-injection",
        }
    }

    pub fn all() -> [AttackKind; 4] {
        [
            AttackKind::Tracing,
            AttackKind::Dos,
            AttackKind::InfoTheft,
            AttackKind::BashInjection,
        ]
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A declared attack instance: which exploit, who launches it, and its
/// kind-specific parameters. The owner must be one of the UPF containers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackSpec {
    pub id: String,
    pub kind: AttackKind,
    pub owner: ContainerId,
    pub target_comm: Option<String>,
    pub filename_suffix: Option<String>,
    pub target_script: Option<String>,
    pub payload: Option<Vec<u8>>,
}

impl AttackSpec {
    /// The sibling programs this attack loads.
    pub fn build(&self) -> Vec<EbpfProgram> {
        match self.kind {
            AttackKind::Tracing => vec![build_tracing(&self.id, &self.owner)],
            AttackKind::Dos => vec![build_dos(
                &self.id,
                &self.owner,
                self.target_comm.as_deref().unwrap_or("falco-like"),
            )],
            AttackKind::InfoTheft => build_info_theft(
                &self.id,
                &self.owner,
                self.filename_suffix.as_deref().unwrap_or("id_rsa"),
            ),
            AttackKind::BashInjection => build_bash_injection(
                &self.id,
                &self.owner,
                self.target_script.as_deref().unwrap_or(".sh"),
                self.payload.clone().unwrap_or_default(),
            ),
        }
    }
}

/// Reconnaissance over every syscall entry on the host: pid, credentials,
/// and comm of whoever traps in, regardless of namespace.
pub fn build_tracing(id: &str, owner: &ContainerId) -> EbpfProgram {
    EbpfProgram {
        id: id.to_string(),
        owner: owner.clone(),
        hook: HookPoint::RawTracepointSysEnter,
        body: ProgramBody::Rules(vec![Rule::new(
            vec![],
            vec![
                HelperCall::GetCurrentPidTgid,
                HelperCall::GetCurrentUidGid,
                HelperCall::GetCurrentComm,
                HelperCall::EmitRecord {
                    kind: RecordKind::ProcessInfo,
                    fields: vec![EmitField::Pid, EmitField::UidGid, EmitField::Comm],
                },
            ],
        )]),
        declared_helpers: Default::default(),
        maps: vec![],
    }
}

/// Kill a target process, matched by comm, whenever it enters read().
pub fn build_dos(id: &str, owner: &ContainerId, target_comm: &str) -> EbpfProgram {
    EbpfProgram {
        id: id.to_string(),
        owner: owner.clone(),
        hook: HookPoint::Kprobe(Syscall::Read),
        body: ProgramBody::Rules(vec![Rule::new(
            vec![Cond::CommEquals(target_comm.to_string())],
            vec![
                HelperCall::SendSignal { signo: 9 },
                HelperCall::EmitRecord {
                    kind: RecordKind::KillReport,
                    fields: vec![EmitField::Pid, EmitField::Comm],
                },
            ],
        )]),
        declared_helpers: Default::default(),
        maps: vec![],
    }
}

fn attack_map(attack_id: &str, name: &str) -> MapDef {
    MapDef {
        id: format!("{attack_id}.{name}"),
        key: KeyType::U32,
        value: ValueType::U64,
        capacity: 1024,
    }
}

/// Two-phase information theft. Open detection: an openat whose filename
/// ends with the suffix puts the caller's pid into the watch map. Read
/// interception: on read exit of a watched pid, lift the freshly filled
/// user buffer and emit it.
pub fn build_info_theft(id: &str, owner: &ContainerId, filename_suffix: &str) -> Vec<EbpfProgram> {
    let watch = format!("{id}.watch");
    let open_detection = EbpfProgram {
        id: format!("{id}-open"),
        owner: owner.clone(),
        hook: HookPoint::Kprobe(Syscall::Openat),
        body: ProgramBody::Rules(vec![Rule::new(
            vec![Cond::FilenameEndsWith(filename_suffix.to_string())],
            vec![
                HelperCall::ProbeReadUserStr,
                HelperCall::MapUpdate {
                    map: watch.clone(),
                    key: KeyBind::Pid,
                    value: ValueBind::Lit(1),
                },
            ],
        )]),
        declared_helpers: Default::default(),
        maps: vec![attack_map(id, "watch")],
    };
    let read_interception = EbpfProgram {
        id: format!("{id}-read"),
        owner: owner.clone(),
        hook: HookPoint::Kretprobe(Syscall::Read),
        body: ProgramBody::Rules(vec![Rule::new(
            vec![Cond::PidInMap(watch)],
            vec![
                HelperCall::ProbeReadUser {
                    len: LenBind::NaturalRetval,
                },
                HelperCall::EmitRecord {
                    kind: RecordKind::FileContent,
                    fields: vec![EmitField::LastBytes],
                },
            ],
        )]),
        declared_helpers: Default::default(),
        maps: vec![attack_map(id, "watch")],
    };
    vec![open_detection, read_interception]
}

/// Runtime script replacement. execve of the target marks the interpreter
/// pid; read entry saves the user buffer address; read exit overwrites the
/// kernel-filled buffer with the payload and overrides the return value to
/// the payload length so the interpreter parses it cleanly.
pub fn build_bash_injection(
    id: &str,
    owner: &ContainerId,
    target_script: &str,
    payload: Vec<u8>,
) -> Vec<EbpfProgram> {
    let tgt = format!("{id}.tgt");
    let bufaddr = format!("{id}.bufaddr");
    let mark_target = EbpfProgram {
        id: format!("{id}-exec"),
        owner: owner.clone(),
        hook: HookPoint::Kprobe(Syscall::Execve),
        body: ProgramBody::Rules(vec![Rule::new(
            vec![Cond::FilenameEndsWith(target_script.to_string())],
            vec![HelperCall::MapUpdate {
                map: tgt.clone(),
                key: KeyBind::Pid,
                value: ValueBind::Lit(1),
            }],
        )]),
        declared_helpers: Default::default(),
        maps: vec![attack_map(id, "tgt")],
    };
    let save_buffer = EbpfProgram {
        id: format!("{id}-read-enter"),
        owner: owner.clone(),
        hook: HookPoint::Kprobe(Syscall::Read),
        body: ProgramBody::Rules(vec![Rule::new(
            vec![Cond::PidInMap(tgt.clone())],
            vec![HelperCall::MapUpdate {
                map: bufaddr.clone(),
                key: KeyBind::Pid,
                value: ValueBind::BufferAddr,
            }],
        )]),
        declared_helpers: Default::default(),
        maps: vec![attack_map(id, "tgt"), attack_map(id, "bufaddr")],
    };
    let payload_len = payload.len() as i64;
    let overwrite = EbpfProgram {
        id: format!("{id}-read-exit"),
        owner: owner.clone(),
        hook: HookPoint::Kretprobe(Syscall::Read),
        body: ProgramBody::Rules(vec![Rule::new(
            vec![Cond::PidInMap(tgt)],
            vec![
                HelperCall::MapLookup {
                    map: bufaddr,
                    key: KeyBind::Pid,
                },
                HelperCall::ProbeWriteUser {
                    target: BufTarget::SavedAddr,
                    payload: payload.clone(),
                },
                HelperCall::OverrideReturn { value: payload_len },
                HelperCall::EmitRecord {
                    kind: RecordKind::InjectionReport,
                    fields: vec![EmitField::Pid, EmitField::Lit(String::from_utf8_lossy(&payload).into_owned())],
                },
            ],
        )]),
        declared_helpers: Default::default(),
        maps: vec![attack_map(id, "tgt"), attack_map(id, "bufaddr")],
    };
    vec![mark_target, save_buffer, overwrite]
}

// ---------------------------------------------------------------------
// Victim workloads
// ---------------------------------------------------------------------

/// Read-looping security-service stand-in; the DoS target.
pub fn security_monitor_workload(name: &str, log_path: &str) -> Workload {
    Workload {
        name: name.to_string(),
        repeat: Repeat::Forever,
        steps: vec![
            Step::Openat {
                path: log_path.to_string(),
            },
            Step::Read { cap: 256 },
            Step::Sleep { ticks: 2 },
        ],
    }
}

/// One-shot login that reads a private key once, then finishes.
pub fn ssh_login_workload(name: &str, key_path: &str) -> Workload {
    Workload::once(
        name,
        vec![
            Step::Sleep { ticks: 2 },
            Step::Openat {
                path: key_path.to_string(),
            },
            Step::Read { cap: 4096 },
            Step::Sleep { ticks: 1 },
        ],
    )
}

/// Interpreter running a script: execve, one-shot read of the script file,
/// then execute whatever the buffer holds.
pub fn script_runner_workload(name: &str, script_path: &str) -> Workload {
    Workload::once(
        name,
        vec![
            Step::Execve {
                path: script_path.to_string(),
            },
            Step::Openat {
                path: script_path.to_string(),
            },
            Step::Read { cap: 4096 },
            Step::RunBuffer,
        ],
    )
}
