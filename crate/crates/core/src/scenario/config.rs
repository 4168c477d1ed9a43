//! Scenario and policy files: versioned TOML, fully cross-checked at parse
//! time so a run never dangles a reference.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use thiserror::Error;

use crate::attacks::{AttackKind, AttackSpec};
use crate::ebpf::hook::{HookPoint, Phase, Syscall};
use crate::ebpf::map::MapDef;
use crate::ebpf::program::{
    BufTarget, Cond, EbpfProgram, EmitField, HelperCall, HelperName, KeyBind, LenBind,
    ProgramBody, RecordKind, Rule, RuleOutcome, ValueBind,
};
use crate::kernel::container::{CapSet, Capability, ContainerId, ContainerSpec};
use crate::kernel::host::ProcessSpec;
use crate::kernel::orchestrator::OrchestratorConfig;
use crate::kernel::workload::Workload;
use crate::policy::{ContainerPolicy, Policy, PolicyMode};
use crate::rng::fnv1a64;
use crate::upf::topology::TopologyConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    /// TOML-level failure; the message carries line/column positions.
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported schema_version {0} (expected {CONFIG_SCHEMA_VERSION})")]
    Schema(u32),
    /// Cross-reference or value validation failure.
    #[error("validation error: {0}")]
    Validation(String),
}

fn val(msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation(msg.into())
}

// ---------------------------------------------------------------------
// Raw (serde) layer
// ---------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema_version: u32,
    name: String,
    seed: u64,
    tick_limit: u64,
    #[serde(default)]
    policy: Option<String>,
    #[serde(default)]
    policy_inline: Option<RawPolicy>,
    #[serde(default)]
    orchestrator: Option<RawOrchestrator>,
    #[serde(default)]
    topology: Option<TopologyConfig>,
    #[serde(default)]
    containers: Vec<RawContainer>,
    #[serde(default)]
    files: Vec<RawFile>,
    #[serde(default)]
    workloads: Vec<Workload>,
    #[serde(default)]
    processes: Vec<RawProcess>,
    #[serde(default)]
    programs: Vec<RawProgram>,
    #[serde(default)]
    attacks: Vec<RawAttack>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOrchestrator {
    #[serde(default = "d_threshold")]
    restart_threshold: u32,
    #[serde(default = "d_window")]
    window: u64,
    #[serde(default = "d_backoff_start")]
    backoff_start: u64,
    #[serde(default = "d_backoff_cap")]
    backoff_cap: u64,
}

fn d_threshold() -> u32 {
    5
}
fn d_window() -> u64 {
    100
}
fn d_backoff_start() -> u64 {
    1
}
fn d_backoff_cap() -> u64 {
    16
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawContainer {
    id: String,
    #[serde(default)]
    caps: Vec<Capability>,
    #[serde(default)]
    bpffs: bool,
    #[serde(default)]
    managed: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    /// Omitted or "host" puts the file in the host namespace.
    #[serde(default)]
    container: Option<String>,
    path: String,
    contents: String,
    #[serde(default)]
    sensitive: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProcess {
    container: String,
    comm: String,
    #[serde(default)]
    uid: u32,
    #[serde(default)]
    gid: u32,
    workload: String,
    #[serde(default = "d_start_tick")]
    start_tick: u64,
}

fn d_start_tick() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttack {
    id: String,
    kind: AttackKind,
    owner: String,
    #[serde(default)]
    target_comm: Option<String>,
    #[serde(default)]
    filename_suffix: Option<String>,
    #[serde(default)]
    target_script: Option<String>,
    #[serde(default)]
    payload: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProgram {
    id: String,
    owner: String,
    hook: String,
    #[serde(default)]
    helpers: Vec<String>,
    #[serde(default)]
    maps: Vec<MapDef>,
    #[serde(default)]
    rules: Vec<RawRule>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    #[serde(default)]
    when: RawWhen,
    #[serde(default, rename = "do")]
    actions: Vec<RawDo>,
    #[serde(default)]
    then: RuleOutcome,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWhen {
    #[serde(default)]
    comm_equals: Option<String>,
    #[serde(default)]
    comm_contains: Option<String>,
    #[serde(default)]
    syscall: Option<String>,
    #[serde(default)]
    filename_ends_with: Option<String>,
    #[serde(default)]
    pid_in_map: Option<String>,
    #[serde(default)]
    phase: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawScalar {
    Int(i64),
    Str(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawField {
    Name(String),
    Lit { lit: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDo {
    helper: String,
    #[serde(default)]
    map: Option<String>,
    #[serde(default)]
    key: Option<RawScalar>,
    #[serde(default)]
    value: Option<RawScalar>,
    #[serde(default)]
    len: Option<RawScalar>,
    #[serde(default)]
    signo: Option<i32>,
    #[serde(default)]
    payload: Option<String>,
    #[serde(default)]
    target: Option<String>,
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    fields: Option<Vec<RawField>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPolicy {
    pub name: String,
    pub mode: PolicyMode,
    #[serde(default)]
    pub strip: Vec<String>,
    #[serde(default)]
    pub containers: BTreeMap<String, RawContainerPolicy>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawContainerPolicy {
    #[serde(default)]
    pub allowed_hooks: Vec<String>,
    #[serde(default)]
    pub allowed_helpers: Vec<String>,
    #[serde(default)]
    pub caps_override: Option<Vec<Capability>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicyFile {
    schema_version: u32,
    #[serde(default, rename = "policy")]
    policies: Vec<RawPolicy>,
}

// ---------------------------------------------------------------------
// Resolved layer
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FileSeed {
    pub container: Option<ContainerId>,
    pub path: String,
    pub contents: Vec<u8>,
    pub sensitive: bool,
}

#[derive(Debug, Clone)]
pub enum PolicyRef {
    Named(String),
    Inline(Policy),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub tick_limit: u64,
    pub hash: u64,
    pub policy: PolicyRef,
    pub orchestrator: OrchestratorConfig,
    pub topology: Option<TopologyConfig>,
    pub containers: Vec<ContainerSpec>,
    pub files: Vec<FileSeed>,
    pub workloads: Vec<Workload>,
    pub processes: Vec<(ContainerId, ProcessSpec)>,
    pub programs: Vec<EbpfProgram>,
    pub attacks: Vec<AttackSpec>,
}

/// Container ids the topology builder creates.
pub const TOPOLOGY_CONTAINERS: [&str; 6] = ["amf", "smf", "nrf", "udm", "eupf1", "eupf2"];
/// Workloads the topology builder registers.
pub const TOPOLOGY_WORKLOADS: [&str; 4] = ["hb-amf", "hb-nrf", "hb-udm", "smf-n4-install"];
/// The UPF containers of the topology; the only legal attack owners.
pub const TOPOLOGY_UPFS: [&str; 2] = ["eupf1", "eupf2"];

pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let raw: RawScenario =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    if raw.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(ConfigError::Schema(raw.schema_version));
    }
    if raw.tick_limit == 0 {
        return Err(val("tick_limit must be positive"));
    }
    if raw.policy.is_some() && raw.policy_inline.is_some() {
        return Err(val("specify either policy or policy_inline, not both"));
    }

    let topology_enabled = raw.topology.is_some();
    let mut container_ids: BTreeSet<String> = BTreeSet::new();
    if topology_enabled {
        container_ids.extend(TOPOLOGY_CONTAINERS.iter().map(|s| s.to_string()));
    }
    for c in &raw.containers {
        if !container_ids.insert(c.id.clone()) {
            return Err(val(format!("duplicate container id {}", c.id)));
        }
    }

    let mut workload_names: BTreeSet<String> = BTreeSet::new();
    if topology_enabled {
        workload_names.extend(TOPOLOGY_WORKLOADS.iter().map(|s| s.to_string()));
    }
    for w in &raw.workloads {
        if !workload_names.insert(w.name.clone()) {
            return Err(val(format!("duplicate workload {}", w.name)));
        }
    }

    let mut files = Vec::new();
    for f in &raw.files {
        let container = match f.container.as_deref() {
            None | Some("host") => None,
            Some(c) => {
                if !container_ids.contains(c) {
                    return Err(val(format!("file {} references unknown container {c}", f.path)));
                }
                Some(ContainerId::from(c))
            }
        };
        files.push(FileSeed {
            container,
            path: f.path.clone(),
            contents: f.contents.clone().into_bytes(),
            sensitive: f.sensitive,
        });
    }

    let mut processes = Vec::new();
    for p in &raw.processes {
        if !container_ids.contains(&p.container) {
            return Err(val(format!(
                "process {} references unknown container {}",
                p.comm, p.container
            )));
        }
        if !workload_names.contains(&p.workload) {
            return Err(val(format!(
                "process {} references unknown workload {}",
                p.comm, p.workload
            )));
        }
        processes.push((
            ContainerId::from(p.container.as_str()),
            ProcessSpec {
                comm: p.comm.clone(),
                uid: p.uid,
                gid: p.gid,
                workload: p.workload.clone(),
                start_tick: p.start_tick,
            },
        ));
    }

    let mut programs = Vec::new();
    for rp in &raw.programs {
        if !container_ids.contains(&rp.owner) {
            return Err(val(format!(
                "program {} references unknown container {}",
                rp.id, rp.owner
            )));
        }
        programs.push(convert_program(rp)?);
    }

    let mut attacks = Vec::new();
    for ra in &raw.attacks {
        if !container_ids.contains(&ra.owner) {
            return Err(val(format!(
                "attack {} references unknown container {}",
                ra.id, ra.owner
            )));
        }
        if !TOPOLOGY_UPFS.contains(&ra.owner.as_str()) {
            return Err(val(format!(
                "attack {} owner {} is not a UPF container",
                ra.id, ra.owner
            )));
        }
        attacks.push(AttackSpec {
            id: ra.id.clone(),
            kind: ra.kind,
            owner: ContainerId::from(ra.owner.as_str()),
            target_comm: ra.target_comm.clone(),
            filename_suffix: ra.filename_suffix.clone(),
            target_script: ra.target_script.clone(),
            payload: ra.payload.clone().map(String::into_bytes),
        });
    }
    if !attacks.is_empty() && !topology_enabled {
        return Err(val("attacks require the topology section (UPF containers)"));
    }

    let policy = match (&raw.policy, &raw.policy_inline) {
        (Some(name), None) => PolicyRef::Named(name.clone()),
        (None, Some(inline)) => PolicyRef::Inline(convert_policy(inline)?),
        (None, None) => PolicyRef::Named("permissive".to_string()),
        (Some(_), Some(_)) => unreachable!("checked above"),
    };

    let orchestrator = raw
        .orchestrator
        .map(|o| OrchestratorConfig {
            restart_threshold: o.restart_threshold,
            window: o.window,
            backoff_start: o.backoff_start,
            backoff_cap: o.backoff_cap,
        })
        .unwrap_or_default();

    Ok(Scenario {
        name: raw.name,
        seed: raw.seed,
        tick_limit: raw.tick_limit,
        hash: fnv1a64(text.as_bytes()),
        policy,
        orchestrator,
        topology: raw.topology,
        containers: raw
            .containers
            .iter()
            .map(|c| ContainerSpec {
                id: ContainerId::from(c.id.as_str()),
                capabilities: c.caps.iter().copied().collect(),
                bpffs_mounted: c.bpffs,
                managed: c.managed,
            })
            .collect(),
        files,
        workloads: raw.workloads,
        processes,
        programs,
        attacks,
    })
}

fn convert_program(raw: &RawProgram) -> Result<EbpfProgram, ConfigError> {
    let hook = HookPoint::parse(&raw.hook)
        .map_err(|e| val(format!("program {}: {e}", raw.id)))?;
    let mut declared = BTreeSet::new();
    for h in &raw.helpers {
        declared.insert(
            HelperName::parse(h)
                .ok_or_else(|| val(format!("program {}: unknown helper {h}", raw.id)))?,
        );
    }
    let map_ids: BTreeSet<&str> = raw.maps.iter().map(|m| m.id.as_str()).collect();
    let mut rules = Vec::new();
    for (i, rr) in raw.rules.iter().enumerate() {
        rules.push(convert_rule(raw, rr, &map_ids, i)?);
    }
    Ok(EbpfProgram {
        id: raw.id.clone(),
        owner: ContainerId::from(raw.owner.as_str()),
        hook,
        body: ProgramBody::Rules(rules),
        declared_helpers: declared,
        maps: raw.maps.clone(),
    })
}

fn convert_rule(
    prog: &RawProgram,
    raw: &RawRule,
    map_ids: &BTreeSet<&str>,
    idx: usize,
) -> Result<Rule, ConfigError> {
    let at = |msg: String| val(format!("program {} rule {idx}: {msg}", prog.id));
    let mut when = Vec::new();
    if let Some(s) = &raw.when.comm_equals {
        when.push(Cond::CommEquals(s.clone()));
    }
    if let Some(s) = &raw.when.comm_contains {
        when.push(Cond::CommContains(s.clone()));
    }
    if let Some(s) = &raw.when.syscall {
        when.push(Cond::SyscallIs(
            Syscall::parse(s).ok_or_else(|| at(format!("unknown syscall {s}")))?,
        ));
    }
    if let Some(s) = &raw.when.filename_ends_with {
        when.push(Cond::FilenameEndsWith(s.clone()));
    }
    if let Some(s) = &raw.when.pid_in_map {
        if !map_ids.contains(s.as_str()) {
            return Err(at(format!("pid_in_map references unknown map {s}")));
        }
        when.push(Cond::PidInMap(s.clone()));
    }
    if let Some(s) = &raw.when.phase {
        when.push(Cond::PhaseIs(match s.as_str() {
            "enter" => Phase::Enter,
            "exit" => Phase::Exit,
            other => return Err(at(format!("unknown phase {other}"))),
        }));
    }

    let mut actions = Vec::new();
    for d in &raw.actions {
        actions.push(convert_do(d, map_ids, &at)?);
    }
    Ok(Rule {
        when,
        actions,
        then: raw.then,
    })
}

fn convert_do(
    d: &RawDo,
    map_ids: &BTreeSet<&str>,
    at: &dyn Fn(String) -> ConfigError,
) -> Result<HelperCall, ConfigError> {
    let helper = HelperName::parse(&d.helper)
        .ok_or_else(|| at(format!("unknown helper {}", d.helper)))?;
    let need_map = || -> Result<String, ConfigError> {
        let m = d
            .map
            .clone()
            .ok_or_else(|| at(format!("{} requires a map", d.helper)))?;
        if !map_ids.contains(m.as_str()) {
            return Err(at(format!("{} references unknown map {m}", d.helper)));
        }
        Ok(m)
    };
    let key_bind = || -> Result<KeyBind, ConfigError> {
        match &d.key {
            Some(RawScalar::Str(s)) if s == "pid" => Ok(KeyBind::Pid),
            Some(RawScalar::Str(s)) if s == "comm" => Ok(KeyBind::Comm),
            Some(RawScalar::Int(v)) => Ok(KeyBind::Lit(*v as u64)),
            Some(RawScalar::Str(s)) => Err(at(format!("unknown key binding {s}"))),
            None => Err(at(format!("{} requires a key", d.helper))),
        }
    };
    Ok(match helper {
        HelperName::GetCurrentPidTgid => HelperCall::GetCurrentPidTgid,
        HelperName::GetCurrentUidGid => HelperCall::GetCurrentUidGid,
        HelperName::GetCurrentComm => HelperCall::GetCurrentComm,
        HelperName::SendSignal => HelperCall::SendSignal {
            signo: d.signo.ok_or_else(|| at("send_signal requires signo".into()))?,
        },
        HelperName::ProbeReadUser => HelperCall::ProbeReadUser {
            len: match &d.len {
                Some(RawScalar::Str(s)) if s == "retval" => LenBind::NaturalRetval,
                Some(RawScalar::Int(v)) => LenBind::Lit(*v as u64),
                Some(RawScalar::Str(s)) => return Err(at(format!("unknown len binding {s}"))),
                None => LenBind::NaturalRetval,
            },
        },
        HelperName::ProbeReadUserStr => HelperCall::ProbeReadUserStr,
        HelperName::ProbeWriteUser => HelperCall::ProbeWriteUser {
            target: match d.target.as_deref() {
                None | Some("ctx") => BufTarget::Ctx,
                Some("saved_addr") => BufTarget::SavedAddr,
                Some(other) => return Err(at(format!("unknown buffer target {other}"))),
            },
            payload: d
                .payload
                .clone()
                .ok_or_else(|| at("probe_write_user requires payload".into()))?
                .into_bytes(),
        },
        HelperName::OverrideReturn => HelperCall::OverrideReturn {
            value: match &d.value {
                Some(RawScalar::Int(v)) => *v,
                _ => return Err(at("override_return requires an integer value".into())),
            },
        },
        HelperName::MapUpdate => HelperCall::MapUpdate {
            map: need_map()?,
            key: key_bind()?,
            value: match &d.value {
                Some(RawScalar::Int(v)) => ValueBind::Lit(*v as u64),
                Some(RawScalar::Str(s)) if s == "buffer_addr" => ValueBind::BufferAddr,
                Some(RawScalar::Str(s)) => return Err(at(format!("unknown value binding {s}"))),
                None => return Err(at("map_update requires a value".into())),
            },
        },
        HelperName::MapLookup => HelperCall::MapLookup {
            map: need_map()?,
            key: key_bind()?,
        },
        HelperName::MapDelete => HelperCall::MapDelete {
            map: need_map()?,
            key: key_bind()?,
        },
        HelperName::EmitRecord => HelperCall::EmitRecord {
            kind: match d.kind.as_deref() {
                Some("process_info") | None => RecordKind::ProcessInfo,
                Some("file_content") => RecordKind::FileContent,
                Some("kill_report") => RecordKind::KillReport,
                Some("injection_report") => RecordKind::InjectionReport,
                Some(other) => return Err(at(format!("unknown record kind {other}"))),
            },
            fields: {
                let mut fields = Vec::new();
                for f in d.fields.as_deref().unwrap_or(&[]) {
                    fields.push(match f {
                        RawField::Lit { lit } => EmitField::Lit(lit.clone()),
                        RawField::Name(n) => match n.as_str() {
                            "pid" => EmitField::Pid,
                            "uid_gid" => EmitField::UidGid,
                            "comm" => EmitField::Comm,
                            "syscall" => EmitField::SyscallName,
                            "last_bytes" => EmitField::LastBytes,
                            other => return Err(at(format!("unknown emit field {other}"))),
                        },
                    });
                }
                fields
            },
        },
    })
}

fn convert_policy(raw: &RawPolicy) -> Result<Policy, ConfigError> {
    let mut per_container = BTreeMap::new();
    match raw.mode {
        PolicyMode::Permissive => {}
        PolicyMode::CapabilityStrip => {
            if raw.strip.is_empty() {
                return Err(val(format!(
                    "policy {}: capability-strip requires a strip list",
                    raw.name
                )));
            }
            for c in &raw.strip {
                per_container.insert(ContainerId::from(c.as_str()), ContainerPolicy::default());
            }
        }
        PolicyMode::FineGrained => {
            for (c, rcp) in &raw.containers {
                let mut allowed_helpers = BTreeSet::new();
                for h in &rcp.allowed_helpers {
                    allowed_helpers.insert(HelperName::parse(h).ok_or_else(|| {
                        val(format!("policy {}: unknown helper {h}", raw.name))
                    })?);
                }
                per_container.insert(
                    ContainerId::from(c.as_str()),
                    ContainerPolicy {
                        allowed_hooks: rcp.allowed_hooks.iter().cloned().collect(),
                        allowed_helpers,
                        caps_override: rcp
                            .caps_override
                            .as_ref()
                            .map(|caps| caps.iter().copied().collect::<CapSet>()),
                    },
                );
            }
        }
    }
    Ok(Policy {
        name: raw.name.clone(),
        mode: raw.mode,
        per_container,
    })
}

/// Parse a policies file: `[[policy]]` entries under one schema version.
pub fn parse_policies(text: &str) -> Result<Vec<Policy>, ConfigError> {
    let raw: RawPolicyFile =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    if raw.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(ConfigError::Schema(raw.schema_version));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for rp in &raw.policies {
        if !seen.insert(rp.name.clone()) {
            return Err(val(format!("duplicate policy name {}", rp.name)));
        }
        out.push(convert_policy(rp)?);
    }
    Ok(out)
}

/// Policies available without a policies file.
pub fn builtin_policies() -> Vec<Policy> {
    let upfs: Vec<ContainerId> = TOPOLOGY_UPFS.iter().map(|s| ContainerId::from(*s)).collect();
    vec![
        Policy::permissive(),
        Policy::capability_strip("capability-strip", &upfs),
        Policy::fine_grained_reference("fine-grained", &upfs),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
name = "mini"
seed = 7
tick_limit = 50

[[containers]]
id = "box"

[[files]]
container = "box"
path = "/data/x"
contents = "hello"

[[workloads]]
name = "w"
steps = [
  { op = "openat", path = "/data/x" },
  { op = "read", cap = 64 },
]

[[processes]]
container = "box"
comm = "proc"
workload = "w"
"#;

    #[test]
    fn minimal_scenario_parses() {
        let sc = parse_scenario(MINIMAL).unwrap();
        assert_eq!(sc.name, "mini");
        assert_eq!(sc.containers.len(), 1);
        assert_eq!(sc.processes.len(), 1);
        assert!(matches!(sc.policy, PolicyRef::Named(ref n) if n == "permissive"));
    }

    #[test]
    fn parse_error_carries_position() {
        let err = parse_scenario("schema_version = \n").unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("line"), "no position in: {msg}");
    }

    #[test]
    fn dangling_references_are_named() {
        let bad = MINIMAL.replace("container = \"box\"\ncomm", "container = \"ghost\"\ncomm");
        let err = parse_scenario(&bad).unwrap_err();
        assert!(format!("{err}").contains("ghost"));

        let bad = MINIMAL.replace("workload = \"w\"", "workload = \"nope\"");
        let err = parse_scenario(&bad).unwrap_err();
        assert!(format!("{err}").contains("nope"));
    }

    #[test]
    fn zero_tick_limit_rejected() {
        let bad = MINIMAL.replace("tick_limit = 50", "tick_limit = 0");
        assert!(matches!(parse_scenario(&bad), Err(ConfigError::Validation(_))));
    }

    #[test]
    fn wrong_schema_rejected() {
        let bad = MINIMAL.replace("schema_version = 1", "schema_version = 9");
        assert!(matches!(parse_scenario(&bad), Err(ConfigError::Schema(9))));
    }

    #[test]
    fn attacks_require_upf_owner() {
        let with_attack = format!(
            "{MINIMAL}\n[topology]\nsessions_per_slice = 2\n\n[[attacks]]\nid = \"t\"\nkind = \"tracing\"\nowner = \"box\"\n"
        );
        let err = parse_scenario(&with_attack).unwrap_err();
        assert!(format!("{err}").contains("not a UPF"));
    }

    #[test]
    fn program_rules_convert() {
        let text = format!(
            r#"{MINIMAL}
[[programs]]
id = "watcher"
owner = "box"
hook = "kprobe/__x64_sys_openat"

[[programs.maps]]
id = "watch"
key = "u32"
value = "u64"

[[programs.rules]]
then = "stop"
[programs.rules.when]
syscall = "openat"
filename_ends_with = "id_rsa"
[[programs.rules.do]]
helper = "probe_read_user_str"
[[programs.rules.do]]
helper = "map_update"
map = "watch"
key = "pid"
value = 1
"#
        );
        let sc = parse_scenario(&text).unwrap();
        assert_eq!(sc.programs.len(), 1);
        let prog = &sc.programs[0];
        assert_eq!(prog.rules().len(), 1);
        assert_eq!(prog.rules()[0].actions.len(), 2);
        assert_eq!(prog.rules()[0].then, RuleOutcome::Stop);
    }

    #[test]
    fn builtin_policy_names() {
        let names: Vec<String> = builtin_policies().into_iter().map(|p| p.name).collect();
        assert_eq!(names, vec!["permissive", "capability-strip", "fine-grained"]);
    }
}
