//! Runtime behavior: the load/attach gate, dispatch ordering, and the
//! helper semantics table.

use std::collections::BTreeSet;

use bpfhost::attacks::build_tracing;
use bpfhost::ebpf::hook::{HookPoint, Syscall};
use bpfhost::ebpf::map::{KeyType, MapDef, ValueType};
use bpfhost::ebpf::program::{
    BufTarget, EbpfProgram, EmitField, EventContext, HelperCall, KeyBind, LenBind, ProgramBody,
    RecordKind, Rule, RuleOutcome, ValueBind,
};
use bpfhost::ebpf::runtime::AttachError;
use bpfhost::ebpf::verifier::LoadError;
use bpfhost::ebpf::MapKey;
use bpfhost::kernel::host::{Host, ProcessSpec};
use bpfhost::kernel::{Capability, Comm, ContainerSpec, OrchestratorConfig, Step, Workload};
use bpfhost::log::{detail_field, EventKind};
use bpfhost::policy::{DenyReason, Policy};

fn host() -> Host {
    Host::new(Policy::permissive(), OrchestratorConfig::default(), 1000)
}

fn upf_spec(id: &str) -> ContainerSpec {
    ContainerSpec::new(id)
        .with_caps(&[Capability::NetAdmin, Capability::SysAdmin])
        .bpffs(true)
}

fn rules_prog(id: &str, owner: &str, hook: HookPoint, rules: Vec<Rule>) -> EbpfProgram {
    EbpfProgram {
        id: id.into(),
        owner: owner.into(),
        hook,
        body: ProgramBody::Rules(rules),
        declared_helpers: BTreeSet::new(),
        maps: vec![],
    }
}

/// Host with one watched process reading one file per loop iteration.
fn reader_host() -> (Host, bpfhost::kernel::Pid) {
    let mut h = host();
    h.create_container(&upf_spec("eupf1")).unwrap();
    h.create_container(&ContainerSpec::new("victim")).unwrap();
    h.add_file(Some(&"victim".into()), "/data/f", b"payload".to_vec(), false)
        .unwrap();
    h.register_workload(Workload::once(
        "reader",
        vec![
            Step::Openat { path: "/data/f".into() },
            Step::Read { cap: 32 },
            Step::Write { data: "log".into() },
        ],
    ));
    let pid = h
        .add_process(
            &"victim".into(),
            ProcessSpec {
                comm: "victim-proc".into(),
                uid: 7,
                gid: 3,
                workload: "reader".into(),
                start_tick: 1,
            },
        )
        .unwrap();
    (h, pid)
}

#[test]
fn load_gate_capability_examples() {
    let mut h = host();
    h.create_container(&upf_spec("eupf1")).unwrap();
    h.create_container(&ContainerSpec::new("amf")).unwrap();

    // SYS_ADMIN owner loads the tracing program under permissive policy.
    assert!(h.load_program(build_tracing("t1", &"eupf1".into())).is_ok());

    // A container with no capabilities cannot load anything.
    match h.load_program(build_tracing("t2", &"amf".into())) {
        Err(LoadError::Denied(DenyReason::CapabilityDenied)) => {}
        other => panic!("expected CapabilityDenied, got {other:?}"),
    }
    // The denial is in the log.
    let denied = h
        .log()
        .iter_kind(EventKind::EbpfLoad)
        .find(|r| r.container == "amf")
        .unwrap();
    assert!(denied.detail.contains("status=denied"));
    assert!(denied.detail.contains("CapabilityDenied"));
}

#[test]
fn helper_denied_names_probe_write_user_for_injection() {
    // Fine-grained policy that allows the hooks but bans the dangerous
    // helpers: the injection program is rejected on probe_write_user.
    let mut policy = Policy::fine_grained_reference("fg", &["eupf1".into()]);
    {
        let cp = policy
            .per_container
            .get_mut(&bpfhost::ContainerId::from("eupf1"))
            .unwrap();
        cp.allowed_hooks.extend(
            ["kprobe/*", "kretprobe/*", "raw_tracepoint/*", "tracepoint/*"]
                .map(str::to_string),
        );
    }
    let mut h = Host::new(policy, OrchestratorConfig::default(), 100);
    h.create_container(&upf_spec("eupf1")).unwrap();

    let progs = bpfhost::attacks::build_bash_injection(
        "inj",
        &"eupf1".into(),
        "x.sh",
        b"payload".to_vec(),
    );
    let mut denials = Vec::new();
    for prog in progs {
        if let Err(LoadError::Denied(reason)) = h.load_program(prog) {
            denials.push(reason);
        }
    }
    assert!(
        denials.contains(&DenyReason::HelperDenied(
            bpfhost::HelperName::ProbeWriteUser
        )),
        "denials: {denials:?}"
    );
}

#[test]
fn attach_requires_declared_hook_and_rejects_double_attach() {
    let mut h = host();
    h.create_container(&upf_spec("eupf1")).unwrap();
    let id = h.load_program(build_tracing("t", &"eupf1".into())).unwrap();
    assert_eq!(
        h.attach_program(id, &HookPoint::Kprobe(Syscall::Read)),
        Err(AttachError::HookMismatch)
    );
    h.attach_program(id, &HookPoint::RawTracepointSysEnter).unwrap();
    assert_eq!(
        h.attach_program(id, &HookPoint::RawTracepointSysEnter),
        Err(AttachError::DoubleAttach)
    );
}

#[test]
fn malformed_program_rejected_at_load() {
    let mut h = host();
    h.create_container(&upf_spec("eupf1")).unwrap();
    // References a map it never declares.
    let prog = rules_prog(
        "bad",
        "eupf1",
        HookPoint::Kprobe(Syscall::Read),
        vec![Rule::new(
            vec![],
            vec![HelperCall::MapUpdate {
                map: "ghost".into(),
                key: KeyBind::Pid,
                value: ValueBind::Lit(1),
            }],
        )],
    );
    assert!(matches!(h.load_program(prog), Err(LoadError::Malformed(_))));

    // Declared helper set not matching the rules is rejected too.
    let mut prog = build_tracing("mismatch", &"eupf1".into());
    prog.declared_helpers = [bpfhost::HelperName::SendSignal].into_iter().collect();
    assert!(matches!(h.load_program(prog), Err(LoadError::Malformed(_))));
}

#[test]
fn sys_enter_program_observes_every_syscall_of_every_container() {
    // Host-wide visibility: the multiset of (pid, syscall) records on the
    // channel equals the ground-truth syscall_enter log, across namespaces.
    let (mut h, _) = reader_host();
    h.create_container(&ContainerSpec::new("other")).unwrap();
    h.add_file(Some(&"other".into()), "/data/g", b"zz".to_vec(), false).unwrap();
    h.register_workload(Workload::once(
        "reader2",
        vec![
            Step::Openat { path: "/data/g".into() },
            Step::Read { cap: 8 },
        ],
    ));
    h.add_process(
        &"other".into(),
        ProcessSpec {
            comm: "other-proc".into(),
            uid: 0,
            gid: 0,
            workload: "reader2".into(),
            start_tick: 2,
        },
    )
    .unwrap();

    let spy = rules_prog(
        "spy",
        "eupf1",
        HookPoint::RawTracepointSysEnter,
        vec![Rule::new(
            vec![],
            vec![HelperCall::EmitRecord {
                kind: RecordKind::ProcessInfo,
                fields: vec![EmitField::Pid, EmitField::SyscallName],
            }],
        )],
    );
    let id = h.load_program(spy).unwrap();
    h.attach_program(id, &HookPoint::RawTracepointSysEnter).unwrap();
    h.run();

    let mut observed: Vec<String> = h
        .ebpf
        .channel(id)
        .iter()
        .map(|r| String::from_utf8_lossy(&r.data).into_owned())
        .collect();
    let mut ground_truth: Vec<String> = h
        .log()
        .iter_kind(EventKind::SyscallEnter)
        .map(|r| {
            format!(
                "pid={} syscall={}",
                r.pid,
                detail_field(&r.detail, "name").unwrap()
            )
        })
        .collect();
    observed.sort();
    ground_truth.sort();
    assert!(!observed.is_empty());
    assert_eq!(observed, ground_truth);
}

#[test]
fn kprobe_program_fires_only_on_its_syscall() {
    let (mut h, _) = reader_host();
    let spy = rules_prog(
        "read-spy",
        "eupf1",
        HookPoint::Kprobe(Syscall::Read),
        vec![Rule::new(
            vec![],
            vec![HelperCall::EmitRecord {
                kind: RecordKind::ProcessInfo,
                fields: vec![EmitField::SyscallName],
            }],
        )],
    );
    let id = h.load_program(spy).unwrap();
    h.attach_program(id, &HookPoint::Kprobe(Syscall::Read)).unwrap();
    h.run();

    let channel = h.ebpf.channel(id);
    assert!(!channel.is_empty());
    assert!(channel.iter().all(|r| r.data == b"syscall=read"));
}

#[test]
fn predicate_mismatch_produces_no_effects() {
    let (mut h, pid) = reader_host();
    let dos = bpfhost::attacks::build_dos("dos", &"eupf1".into(), "falco");
    let id = h.load_program(dos).unwrap();
    h.attach_program(id, &HookPoint::Kprobe(Syscall::Read)).unwrap();
    h.run();
    // comm is "victim-proc", not "falco": nothing happens.
    assert!(h.processes.get(pid).unwrap().state == bpfhost::kernel::ProcState::Exited);
    assert!(h.ebpf.channel(id).is_empty());
    assert_eq!(
        h.log()
            .iter_kind(EventKind::Helper)
            .filter(|r| r.detail.contains("prog=dos"))
            .count(),
        0
    );
}

#[test]
fn override_slot_is_single_post_first_wins() {
    let (mut h, pid) = reader_host();
    for (name, value) in [("first", 11), ("second", 22)] {
        let prog = rules_prog(
            name,
            "eupf1",
            HookPoint::Kretprobe(Syscall::Read),
            vec![Rule::new(vec![], vec![HelperCall::OverrideReturn { value }])],
        );
        let id = h.load_program(prog).unwrap();
        h.attach_program(id, &HookPoint::Kretprobe(Syscall::Read)).unwrap();
    }
    h.run();

    // First program's value sticks.
    let (_, observed) = h.processes.get(pid).unwrap().last_read.unwrap();
    assert_eq!(observed, 11);
    // Second program's attempt failed with a conflict, and that is logged.
    let conflict = h
        .log()
        .iter_kind(EventKind::Helper)
        .find(|r| r.detail.contains("prog=second") && r.detail.contains("override_return"))
        .unwrap();
    assert!(conflict.detail.contains("err=override_conflict"));
}

#[test]
fn rule_stop_skips_remaining_rules() {
    let (mut h, _) = reader_host();
    let prog = EbpfProgram {
        id: "stopper".into(),
        owner: "eupf1".into(),
        hook: HookPoint::Kprobe(Syscall::Read),
        body: ProgramBody::Rules(vec![
            Rule {
                when: vec![],
                actions: vec![HelperCall::EmitRecord {
                    kind: RecordKind::ProcessInfo,
                    fields: vec![EmitField::Lit("one".into())],
                }],
                then: RuleOutcome::Stop,
            },
            Rule::new(
                vec![],
                vec![HelperCall::EmitRecord {
                    kind: RecordKind::ProcessInfo,
                    fields: vec![EmitField::Lit("two".into())],
                }],
            ),
        ]),
        declared_helpers: BTreeSet::new(),
        maps: vec![],
    };
    let id = h.load_program(prog).unwrap();
    h.attach_program(id, &HookPoint::Kprobe(Syscall::Read)).unwrap();
    h.run();
    let channel = h.ebpf.channel(id);
    assert!(!channel.is_empty());
    assert!(channel.iter().all(|r| r.data == b"one"));
}

#[test]
fn packing_identities() {
    let ctx = EventContext {
        pid: 42,
        tgid: 42,
        uid: 1000,
        gid: 5,
        comm: Comm::new("x"),
        container: "c".into(),
        syscall: Syscall::Read,
        phase: bpfhost::Phase::Enter,
        args: Default::default(),
        buffer: None,
        natural_retval: None,
        sid: 1,
    };
    assert_eq!(ctx.pid_tgid_packed(), (42u64 << 32) | 42);
    assert_eq!(ctx.uid_gid_packed(), (5u64 << 32) | 1000);
}

#[test]
fn probe_read_user_on_empty_buffer_at_enter_fails() {
    let (mut h, _) = reader_host();
    let prog = rules_prog(
        "early-read",
        "eupf1",
        HookPoint::Kprobe(Syscall::Read),
        vec![Rule::new(
            vec![],
            vec![
                HelperCall::ProbeReadUser { len: LenBind::Lit(4) },
                HelperCall::EmitRecord {
                    kind: RecordKind::FileContent,
                    fields: vec![EmitField::LastBytes],
                },
            ],
        )],
    );
    let id = h.load_program(prog).unwrap();
    h.attach_program(id, &HookPoint::Kprobe(Syscall::Read)).unwrap();
    h.run();

    // The helper failed (buffer still Empty at entry), which aborted the
    // rule: no record was emitted.
    let failed = h
        .log()
        .iter_kind(EventKind::Helper)
        .find(|r| r.detail.contains("prog=early-read") && r.detail.contains("probe_read_user"))
        .unwrap();
    assert!(failed.detail.contains("err=buffer_empty"));
    assert!(h.ebpf.channel(id).is_empty());
}

#[test]
fn probe_write_then_override_replays_buffer_state_machine() {
    let (mut h, pid) = reader_host();
    let prog = rules_prog(
        "inject",
        "eupf1",
        HookPoint::Kretprobe(Syscall::Read),
        vec![Rule::new(
            vec![],
            vec![
                HelperCall::ProbeWriteUser {
                    target: BufTarget::Ctx,
                    payload: b"echo pwned".to_vec(),
                },
                HelperCall::OverrideReturn { value: 10 },
            ],
        )],
    );
    let id = h.load_program(prog).unwrap();
    h.attach_program(id, &HookPoint::Kretprobe(Syscall::Read)).unwrap();
    h.run();

    let (addr, observed) = h.processes.get(pid).unwrap().last_read.unwrap();
    let buf = h.buffers.get(addr).unwrap();
    assert_eq!(buf.contents, b"echo pwned");
    assert_eq!(buf.fill_state, bpfhost::kernel::FillState::Overwritten);
    assert_eq!(observed, 10);
    // The effect record captures the prior fill state.
    let write = h
        .log()
        .iter_kind(EventKind::Helper)
        .find(|r| r.detail.contains("probe_write_user") && r.detail.contains("status=ok"))
        .unwrap();
    assert!(write.detail.contains("fill_prev=filled"));
}

#[test]
fn probe_write_user_at_enter_phase_is_rejected() {
    let (mut h, pid) = reader_host();
    let prog = rules_prog(
        "early-write",
        "eupf1",
        HookPoint::Kprobe(Syscall::Read),
        vec![Rule::new(
            vec![],
            vec![HelperCall::ProbeWriteUser {
                target: BufTarget::Ctx,
                payload: b"x".to_vec(),
            }],
        )],
    );
    let id = h.load_program(prog).unwrap();
    h.attach_program(id, &HookPoint::Kprobe(Syscall::Read)).unwrap();
    h.run();

    let rec = h
        .log()
        .iter_kind(EventKind::Helper)
        .find(|r| r.detail.contains("prog=early-write"))
        .unwrap();
    assert!(rec.detail.contains("err=phase_violation"));
    // The buffer was filled by the kernel untouched.
    let (addr, observed) = h.processes.get(pid).unwrap().last_read.unwrap();
    assert_eq!(h.buffers.get(addr).unwrap().contents, b"payload");
    assert_eq!(observed, 7);
}

#[test]
fn invalid_signo_is_a_helper_error() {
    let (mut h, pid) = reader_host();
    let prog = rules_prog(
        "bad-signal",
        "eupf1",
        HookPoint::Kprobe(Syscall::Read),
        vec![Rule::new(vec![], vec![HelperCall::SendSignal { signo: 7 }])],
    );
    let id = h.load_program(prog).unwrap();
    h.attach_program(id, &HookPoint::Kprobe(Syscall::Read)).unwrap();
    h.run();
    let rec = h
        .log()
        .iter_kind(EventKind::Helper)
        .find(|r| r.detail.contains("prog=bad-signal"))
        .unwrap();
    assert!(rec.detail.contains("err=invalid_signo:7"));
    assert!(h.processes.get(pid).unwrap().state != bpfhost::kernel::ProcState::Killed);
}

#[test]
fn map_capacity_is_enforced_during_dispatch() {
    let (mut h, _) = reader_host();
    let prog = EbpfProgram {
        id: "filler".into(),
        owner: "eupf1".into(),
        hook: HookPoint::Kprobe(Syscall::Read),
        body: ProgramBody::Rules(vec![Rule::new(
            vec![],
            vec![
                HelperCall::MapUpdate {
                    map: "small".into(),
                    key: KeyBind::Lit(1),
                    value: ValueBind::Lit(10),
                },
                HelperCall::MapUpdate {
                    map: "small".into(),
                    key: KeyBind::Lit(2),
                    value: ValueBind::Lit(20),
                },
                HelperCall::MapUpdate {
                    map: "small".into(),
                    key: KeyBind::Lit(3),
                    value: ValueBind::Lit(30),
                },
            ],
        )]),
        declared_helpers: BTreeSet::new(),
        maps: vec![MapDef {
            id: "small".into(),
            key: KeyType::U64,
            value: ValueType::U64,
            capacity: 2,
        }],
    };
    let id = h.load_program(prog).unwrap();
    h.attach_program(id, &HookPoint::Kprobe(Syscall::Read)).unwrap();
    h.run();

    let map = h.ebpf.map(&"eupf1".into(), "small").unwrap();
    assert_eq!(map.len(), 2);
    assert!(map.contains(&MapKey::U64(1)));
    assert!(map.contains(&MapKey::U64(2)));
    assert!(!map.contains(&MapKey::U64(3)));
    let full = h
        .log()
        .iter_kind(EventKind::Helper)
        .find(|r| r.detail.contains("err=map_full"))
        .unwrap();
    assert!(full.detail.contains("prog=filler"));
}

#[test]
fn map_states_are_a_pure_function_of_the_dispatch_sequence() {
    // Identical hosts, identical dispatch sequences: the final map states
    // must match entry for entry.
    let build = || {
        let (mut h, _) = reader_host();
        let theft =
            bpfhost::attacks::build_info_theft("theft", &"eupf1".into(), "f");
        for prog in theft {
            let hook = prog.hook.clone();
            let id = h.load_program(prog).unwrap();
            h.attach_program(id, &hook).unwrap();
        }
        h.run();
        format!("{:?}", h.ebpf.map_states())
    };
    assert_eq!(build(), build());
}

#[test]
fn channel_records_are_ordered_by_tick() {
    let (mut h, _) = reader_host();
    let id = h.load_program(build_tracing("t", &"eupf1".into())).unwrap();
    h.attach_program(id, &HookPoint::RawTracepointSysEnter).unwrap();
    h.run();
    let channel = h.ebpf.channel(id);
    assert!(channel.windows(2).all(|w| w[0].tick <= w[1].tick));
}

#[test]
fn failed_helper_aborts_its_rule_but_later_rules_still_run() {
    let (mut h, _) = reader_host();
    let prog = EbpfProgram {
        id: "resilient".into(),
        owner: "eupf1".into(),
        hook: HookPoint::Kprobe(Syscall::Read),
        body: ProgramBody::Rules(vec![
            // Rule 1: probe_read_user fails on the still-empty buffer, so
            // its emit never happens.
            Rule::new(
                vec![],
                vec![
                    HelperCall::ProbeReadUser { len: LenBind::Lit(4) },
                    HelperCall::EmitRecord {
                        kind: RecordKind::FileContent,
                        fields: vec![EmitField::LastBytes],
                    },
                ],
            ),
            // Rule 2 still runs.
            Rule::new(
                vec![],
                vec![HelperCall::EmitRecord {
                    kind: RecordKind::ProcessInfo,
                    fields: vec![EmitField::Lit("still-alive".into())],
                }],
            ),
        ]),
        declared_helpers: BTreeSet::new(),
        maps: vec![],
    };
    let id = h.load_program(prog).unwrap();
    h.attach_program(id, &HookPoint::Kprobe(Syscall::Read)).unwrap();
    h.run();
    let channel = h.ebpf.channel(id);
    assert!(!channel.is_empty());
    assert!(channel.iter().all(|r| r.data == b"still-alive"));
}

#[test]
fn every_executed_helper_was_statically_declared() {
    // Verifier soundness, audited from the log: each helper effect must
    // appear in its program's computed helper set.
    let (mut h, _) = reader_host();
    for prog in bpfhost::attacks::build_info_theft("theft", &"eupf1".into(), "f") {
        let hook = prog.hook.clone();
        let id = h.load_program(prog).unwrap();
        h.attach_program(id, &hook).unwrap();
    }
    h.run();
    for rec in h.log().iter_kind(EventKind::Helper) {
        let prog_name = detail_field(&rec.detail, "prog").unwrap();
        let helper = detail_field(&rec.detail, "helper").unwrap();
        let prog_id = h.ebpf.find_by_name(prog_name).unwrap();
        let declared = h.ebpf.get(prog_id).unwrap().prog.computed_helpers();
        assert!(
            declared
                .iter()
                .any(|d| d.canonical() == helper),
            "{prog_name} executed undeclared helper {helper}"
        );
    }
}
