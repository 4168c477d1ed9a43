//! The simulated host: one shared kernel, containers, processes, the eBPF
//! runtime, the user-plane pipelines, and a restart orchestrator, driven by
//! a single deterministic event queue.
//!
//! Everything observable about a run flows into the event log; two runs of
//! the same configuration and seed produce byte-identical logs.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use thiserror::Error;

use super::container::{caps_to_string, Container, ContainerId, ContainerSpec, Namespace};
use super::fs::{BufferTable, FileNode, Filesystem};
use super::orchestrator::{Decision, Orchestrator, OrchestratorConfig};
use super::process::{Comm, Pid, ProcState, Process, ProcessTable, SignalError, SignalResult};
use super::workload::{Repeat, Step, Workload};
use crate::ebpf::hook::{HookPoint, Phase, Syscall};
use crate::ebpf::program::{CtxArgs, EbpfProgram, EventContext};
use crate::ebpf::runtime::{
    AttachError, DispatchWorld, OverrideSlot, ProgId, Runtime,
};
use crate::ebpf::verifier::{self, LoadError};
use crate::log::{EventKind, EventLog};
use crate::policy::Policy;
use crate::rng::fnv1a64;
use crate::upf::gtp::{NodeId, SliceId};
use crate::upf::pipeline::{self, VerdictCounters, XdpVerdict};
use crate::upf::session::{install_into_map, PfcpSession, SessionError, UpfNode};

pub const ENOENT: i64 = -2;
pub const EBADF: i64 = -9;

/// Map id every XDP forwarder uses for its session table.
pub const SESSION_MAP_ID: &str = "sessions";

#[derive(Debug, Error)]
pub enum HostError {
    #[error("container id {0} already exists")]
    DuplicateContainer(ContainerId),
    #[error("unknown container {0}")]
    UnknownContainer(ContainerId),
    #[error("unknown workload {0}")]
    UnknownWorkload(String),
    #[error("process {0} is not running")]
    NotRunning(Pid),
    #[error("unknown process {0}")]
    UnknownProcess(Pid),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyscallRequest {
    Openat { path: String },
    Read { fd: i32, cap: usize },
    Write { fd: i32, data: Vec<u8> },
    Execve { path: String },
}

impl SyscallRequest {
    pub fn syscall(&self) -> Syscall {
        match self {
            SyscallRequest::Openat { .. } => Syscall::Openat,
            SyscallRequest::Read { .. } => Syscall::Read,
            SyscallRequest::Write { .. } => Syscall::Write,
            SyscallRequest::Execve { .. } => Syscall::Execve,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyscallOutcome {
    pub retval: i64,
    /// The calling process was killed by a hook; control never returned.
    pub aborted: bool,
}

/// Initial process description; kept per container so the orchestrator can
/// respawn the workload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessSpec {
    pub comm: String,
    pub uid: u32,
    pub gid: u32,
    pub workload: String,
    pub start_tick: u64,
}

#[derive(Debug, Clone)]
enum Ev {
    Step {
        pid: Pid,
    },
    Respawn {
        container: ContainerId,
    },
    Uplink {
        upf: ContainerId,
        frame: Vec<u8>,
        slice: Option<SliceId>,
    },
    Downlink {
        upf: ContainerId,
        teid: u32,
        payload: Vec<u8>,
        slice: Option<SliceId>,
    },
}

#[derive(Debug, Clone)]
struct QueueEntry {
    tick: u64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        (self.tick, self.seq) == (other.tick, other.seq)
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.tick, self.seq).cmp(&(other.tick, other.seq))
    }
}

pub struct Host {
    policy: Policy,
    containers: BTreeMap<ContainerId, Container>,
    next_ns: u32,
    pub processes: ProcessTable,
    pub fs: Filesystem,
    pub buffers: BufferTable,
    pub ebpf: Runtime,
    pub orchestrator: Orchestrator,
    upfs: BTreeMap<ContainerId, UpfNode>,
    counters: BTreeMap<ContainerId, VerdictCounters>,
    workloads: BTreeMap<String, Workload>,
    spawn_specs: BTreeMap<ContainerId, Vec<ProcessSpec>>,
    log: EventLog,
    queue: BinaryHeap<Reverse<QueueEntry>>,
    seq: u64,
    sid: u64,
    tick: u64,
    tick_limit: u64,
    dead_dirty: BTreeSet<ContainerId>,
}

impl Host {
    pub fn new(policy: Policy, orch: OrchestratorConfig, tick_limit: u64) -> Self {
        Host {
            policy,
            containers: BTreeMap::new(),
            next_ns: 1,
            processes: ProcessTable::new(),
            fs: Filesystem::new(),
            buffers: BufferTable::new(),
            ebpf: Runtime::new(),
            orchestrator: Orchestrator::new(orch),
            upfs: BTreeMap::new(),
            counters: BTreeMap::new(),
            workloads: BTreeMap::new(),
            spawn_specs: BTreeMap::new(),
            log: EventLog::new(),
            queue: BinaryHeap::new(),
            seq: 0,
            sid: 0,
            tick: 0,
            tick_limit,
            dead_dirty: BTreeSet::new(),
        }
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut EventLog {
        &mut self.log
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Events still queued (0 after a run means the run went quiescent
    /// rather than hitting the tick limit).
    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    pub fn container(&self, id: &ContainerId) -> Option<&Container> {
        self.containers.get(id)
    }

    pub fn containers(&self) -> impl Iterator<Item = &Container> {
        self.containers.values()
    }

    pub fn upf(&self, id: &ContainerId) -> Option<&UpfNode> {
        self.upfs.get(id)
    }

    pub fn upfs(&self) -> impl Iterator<Item = (&ContainerId, &UpfNode)> {
        self.upfs.iter()
    }

    pub fn verdict_counters(&self, id: &ContainerId) -> VerdictCounters {
        self.counters.get(id).copied().unwrap_or_default()
    }

    // ------------------------------------------------------------------
    // Setup surface
    // ------------------------------------------------------------------

    pub fn create_container(&mut self, spec: &ContainerSpec) -> Result<ContainerId, HostError> {
        if self.containers.contains_key(&spec.id) {
            return Err(HostError::DuplicateContainer(spec.id.clone()));
        }
        let ns = Namespace::Container(self.next_ns);
        self.next_ns += 1;
        let container = Container::from_spec(spec, ns);
        self.log.emit(
            self.tick,
            EventKind::ContainerCreate,
            0,
            spec.id.as_str(),
            format!(
                "ns={ns} caps={} bpffs={} managed={}",
                caps_to_string(&spec.capabilities),
                spec.bpffs_mounted,
                spec.managed
            ),
        );
        if spec.managed {
            self.orchestrator.register(spec.id.clone());
        }
        self.containers.insert(spec.id.clone(), container);
        self.spawn_specs.entry(spec.id.clone()).or_default();
        Ok(spec.id.clone())
    }

    pub fn register_workload(&mut self, workload: Workload) {
        self.workloads.insert(workload.name.clone(), workload);
    }

    /// Add a file to a container's namespace (or the host namespace).
    pub fn add_file(
        &mut self,
        container: Option<&ContainerId>,
        path: &str,
        contents: Vec<u8>,
        sensitive: bool,
    ) -> Result<(), HostError> {
        let ns = match container {
            None => Namespace::Host,
            Some(id) => self
                .containers
                .get(id)
                .ok_or_else(|| HostError::UnknownContainer(id.clone()))?
                .namespace(),
        };
        self.fs.insert(FileNode {
            path: path.to_string(),
            namespace: ns,
            contents,
            sensitive,
        });
        Ok(())
    }

    /// Declare a container as a UPF node serving one slice.
    pub fn add_upf(&mut self, container: &ContainerId, slice: SliceId, gnb_peer: NodeId) -> Result<(), HostError> {
        if !self.containers.contains_key(container) {
            return Err(HostError::UnknownContainer(container.clone()));
        }
        self.upfs.insert(
            container.clone(),
            UpfNode {
                container: container.clone(),
                slice,
                pipeline: None,
                gnb_peer,
            },
        );
        self.counters.entry(container.clone()).or_default();
        Ok(())
    }

    /// Record the spawn spec for respawns, then spawn at its start tick.
    pub fn add_process(&mut self, container: &ContainerId, spec: ProcessSpec) -> Result<Pid, HostError> {
        if !self.containers.contains_key(container) {
            return Err(HostError::UnknownContainer(container.clone()));
        }
        self.spawn_specs
            .entry(container.clone())
            .or_default()
            .push(spec.clone());
        self.spawn_with_start(container, &spec)
    }

    fn spawn_with_start(&mut self, container: &ContainerId, spec: &ProcessSpec) -> Result<Pid, HostError> {
        let pid = self.spawn_process(container, &spec.comm, spec.uid, spec.gid, &spec.workload)?;
        let start = spec.start_tick.max(self.tick + 1);
        self.schedule(start, Ev::Step { pid });
        Ok(pid)
    }

    /// Create a Running process. Its comm is truncated to the fixed width.
    pub fn spawn_process(
        &mut self,
        container: &ContainerId,
        comm: &str,
        uid: u32,
        gid: u32,
        workload: &str,
    ) -> Result<Pid, HostError> {
        let c = self
            .containers
            .get(container)
            .ok_or_else(|| HostError::UnknownContainer(container.clone()))?;
        if !self.workloads.contains_key(workload) {
            return Err(HostError::UnknownWorkload(workload.to_string()));
        }
        let ns = c.namespace();
        let pid = self.processes.alloc_pid();
        let proc = Process::new(pid, uid, gid, Comm::new(comm), container.clone(), ns, workload.to_string());
        self.log.emit(
            self.tick,
            EventKind::Spawn,
            pid.0,
            container.as_str(),
            format!("comm={} uid={uid} gid={gid} workload={workload}", proc.comm),
        );
        self.processes.insert(proc);
        Ok(pid)
    }

    // ------------------------------------------------------------------
    // eBPF load / attach gate
    // ------------------------------------------------------------------

    /// The full load gate: structural verification, then capabilities, then
    /// policy hooks/helpers. Denials and malformed programs are logged and
    /// returned; they leave no resident program.
    pub fn load_program(&mut self, prog: EbpfProgram) -> Result<ProgId, LoadError> {
        let owner = match self.containers.get(&prog.owner) {
            Some(c) => c,
            None => {
                // An unknown owner cannot satisfy the capability gate.
                self.log.emit(
                    self.tick,
                    EventKind::EbpfLoad,
                    0,
                    prog.owner.as_str(),
                    format!(
                        "prog={} hook={} status=denied reason=CapabilityDenied",
                        prog.id, prog.hook
                    ),
                );
                return Err(LoadError::Denied(crate::policy::DenyReason::CapabilityDenied));
            }
        };
        let verified = match verifier::verify_structure(&prog).and_then(|helpers| {
            // Joining a map a sibling already pinned requires an identical
            // definition.
            for def in &prog.maps {
                if let Some(existing) = self.ebpf.map_def(&prog.owner, &def.id) {
                    if existing != def {
                        return Err(verifier::MalformedReason::MapDefConflict(def.id.clone()));
                    }
                }
            }
            Ok(helpers)
        }) {
            Ok(helpers) => helpers,
            Err(reason) => {
                self.log.emit(
                    self.tick,
                    EventKind::EbpfLoad,
                    0,
                    prog.owner.as_str(),
                    format!("prog={} hook={} status=malformed reason={reason}", prog.id, prog.hook),
                );
                return Err(LoadError::Malformed(reason));
            }
        };
        if let Err(reason) = self.policy.check_load(owner, &prog) {
            self.log.emit(
                self.tick,
                EventKind::EbpfLoad,
                0,
                prog.owner.as_str(),
                format!("prog={} hook={} status=denied reason={reason}", prog.id, prog.hook),
            );
            return Err(LoadError::Denied(reason));
        }
        let helpers = verified
            .iter()
            .map(|h| h.canonical())
            .collect::<Vec<_>>()
            .join(",");
        self.log.emit(
            self.tick,
            EventKind::EbpfLoad,
            0,
            prog.owner.as_str(),
            format!(
                "prog={} hook={} status=ok helpers={}",
                prog.id,
                prog.hook,
                if helpers.is_empty() { "-".to_string() } else { helpers }
            ),
        );
        Ok(self.ebpf.insert_loaded(prog))
    }

    /// Attach a loaded program to its declared hook. XDP attachment also
    /// requires NET_ADMIN and registers the pipeline on the owning UPF.
    pub fn attach_program(&mut self, id: ProgId, hook: &HookPoint) -> Result<(), AttachError> {
        let (owner, prog_id_str, is_xdp) = {
            let lp = self.ebpf.get(id).ok_or(AttachError::NotLoaded)?;
            (lp.prog.owner.clone(), lp.prog.id.clone(), lp.prog.hook == HookPoint::Xdp)
        };
        if is_xdp && hook == &HookPoint::Xdp {
            let container = self.containers.get(&owner).ok_or(AttachError::NotLoaded)?;
            if self.policy.check_xdp_attach(container).is_err() {
                self.log.emit(
                    self.tick,
                    EventKind::EbpfAttach,
                    0,
                    owner.as_str(),
                    format!("prog={prog_id_str} hook=xdp status=denied reason=CapabilityDenied"),
                );
                return Err(AttachError::AttachDenied);
            }
        }
        match self.ebpf.attach(id, hook) {
            Ok(_) => {
                if is_xdp {
                    if let Some(upf) = self.upfs.get_mut(&owner) {
                        upf.pipeline = Some(id);
                    }
                }
                self.log.emit(
                    self.tick,
                    EventKind::EbpfAttach,
                    0,
                    owner.as_str(),
                    format!("prog={prog_id_str} hook={hook} status=ok"),
                );
                Ok(())
            }
            Err(e) => {
                self.log.emit(
                    self.tick,
                    EventKind::EbpfAttach,
                    0,
                    owner.as_str(),
                    format!("prog={prog_id_str} hook={hook} status=error reason={e}"),
                );
                Err(e)
            }
        }
    }

    // ------------------------------------------------------------------
    // User plane
    // ------------------------------------------------------------------

    /// N4 path: install a PFCP forwarding rule into a UPF's session map.
    pub fn install_session(&mut self, upf: &ContainerId, session: PfcpSession) -> Result<(), HostError> {
        let result = self.try_install(upf, &session);
        let status = match &result {
            Ok(()) => "ok".to_string(),
            Err(e) => format!("err={e}"),
        };
        let action = match &session.action {
            crate::upf::session::SessionAction::Forward { peer } => format!("forward peer={peer}"),
            crate::upf::session::SessionAction::Drop => "drop".to_string(),
        };
        self.log.emit(
            self.tick,
            EventKind::PfcpInstall,
            0,
            upf.as_str(),
            format!(
                "seid={} teid={} action={action} status={status}",
                session.seid, session.teid
            ),
        );
        result
    }

    /// N4 path: remove a previously installed rule.
    pub fn remove_session(&mut self, upf: &ContainerId, teid: u32) -> Result<(), HostError> {
        let node = self
            .upfs
            .get(upf)
            .ok_or_else(|| HostError::Session(SessionError::NotAUpf(upf.to_string())))?;
        if node.pipeline.is_none() {
            return Err(HostError::Session(SessionError::NoPipeline));
        }
        let map = self
            .ebpf
            .map_mut(upf, SESSION_MAP_ID)
            .ok_or(HostError::Session(SessionError::NoPipeline))?;
        let result = crate::upf::session::remove_from_map(map, teid);
        self.log.emit(
            self.tick,
            EventKind::PfcpInstall,
            0,
            upf.as_str(),
            format!(
                "teid={teid} action=remove status={}",
                match &result {
                    Ok(()) => "ok".to_string(),
                    Err(e) => format!("err={e}"),
                }
            ),
        );
        result.map_err(HostError::from)
    }

    fn try_install(&mut self, upf: &ContainerId, session: &PfcpSession) -> Result<(), HostError> {
        if !self.containers.contains_key(upf) {
            return Err(HostError::UnknownContainer(upf.clone()));
        }
        let node = self
            .upfs
            .get(upf)
            .ok_or_else(|| HostError::Session(SessionError::NotAUpf(upf.to_string())))?;
        if node.pipeline.is_none() {
            return Err(HostError::Session(SessionError::NoPipeline));
        }
        let map = self
            .ebpf
            .map_mut(upf, SESSION_MAP_ID)
            .ok_or(HostError::Session(SessionError::NoPipeline))?;
        install_into_map(map, session)?;
        Ok(())
    }

    /// Schedule an uplink N3 frame for a UPF. `slice` is the ground-truth
    /// label used only for verification.
    pub fn schedule_uplink(&mut self, tick: u64, upf: &ContainerId, frame: Vec<u8>, slice: Option<SliceId>) {
        self.schedule(
            tick,
            Ev::Uplink {
                upf: upf.clone(),
                frame,
                slice,
            },
        );
    }

    pub fn schedule_downlink(
        &mut self,
        tick: u64,
        upf: &ContainerId,
        teid: u32,
        payload: Vec<u8>,
        slice: Option<SliceId>,
    ) {
        self.schedule(
            tick,
            Ev::Downlink {
                upf: upf.clone(),
                teid,
                payload,
                slice,
            },
        );
    }

    fn handle_uplink(&mut self, upf: ContainerId, frame: Vec<u8>, slice: Option<SliceId>) {
        let slice_s = slice.map(|s| s.0.to_string()).unwrap_or_else(|| "-".into());
        let frame_fnv = fnv1a64(&frame);
        if self.upfs.get(&upf).and_then(|n| n.pipeline).is_none() {
            self.log.emit(
                self.tick,
                EventKind::PktUnhandled,
                0,
                upf.as_str(),
                format!("dir=ul slice={slice_s} frame_fnv={frame_fnv:016x} reason=no_pipeline"),
            );
            return;
        }
        let map = self.ebpf.map(&upf, SESSION_MAP_ID).expect("forwarder has session map");
        let verdict = pipeline::xdp_ingress_uplink(map, &frame);
        self.counters.entry(upf.clone()).or_default().count(&verdict);
        let detail = match &verdict {
            XdpVerdict::Redirect { peer, payload } => format!(
                "dir=ul slice={slice_s} frame_fnv={frame_fnv:016x} verdict=redirect peer={peer} payload_fnv={:016x}",
                fnv1a64(payload)
            ),
            v => format!("dir=ul slice={slice_s} frame_fnv={frame_fnv:016x} verdict={}", v.name()),
        };
        self.log.emit(self.tick, EventKind::XdpVerdict, 0, upf.as_str(), detail);
    }

    fn handle_downlink(&mut self, upf: ContainerId, teid: u32, payload: Vec<u8>, slice: Option<SliceId>) {
        let slice_s = slice.map(|s| s.0.to_string()).unwrap_or_else(|| "-".into());
        let Some(node) = self.upfs.get(&upf) else {
            return;
        };
        let gnb = node.gnb_peer.clone();
        if node.pipeline.is_none() {
            self.log.emit(
                self.tick,
                EventKind::PktUnhandled,
                0,
                upf.as_str(),
                format!("dir=dl slice={slice_s} teid={teid} reason=no_pipeline"),
            );
            return;
        }
        let map = self.ebpf.map(&upf, SESSION_MAP_ID).expect("forwarder has session map");
        let verdict = pipeline::xdp_ingress_downlink(map, &gnb, teid, &payload);
        self.counters.entry(upf.clone()).or_default().count(&verdict);
        let detail = match &verdict {
            XdpVerdict::Redirect { peer, payload } => format!(
                "dir=dl slice={slice_s} teid={teid} verdict=redirect peer={peer} payload_fnv={:016x}",
                fnv1a64(payload)
            ),
            v => format!("dir=dl slice={slice_s} teid={teid} verdict={}", v.name()),
        };
        self.log.emit(self.tick, EventKind::XdpVerdict, 0, upf.as_str(), detail);
    }

    // ------------------------------------------------------------------
    // Syscalls and signals
    // ------------------------------------------------------------------

    pub fn deliver_signal(&mut self, target: Pid, signo: i32) -> Result<SignalResult, HostError> {
        let result = self
            .processes
            .deliver_signal(target, signo, self.tick, &mut self.log)?;
        if let Some(proc) = self.processes.get(target) {
            if !proc.is_running() {
                self.dead_dirty.insert(proc.container.clone());
            }
        }
        Ok(result)
    }

    /// Execute the full syscall lifecycle: entry hooks, kernel action, exit
    /// hooks, return-value override. A SIGKILL from any hook aborts the
    /// syscall once the in-flight dispatch finishes.
    pub fn do_syscall(&mut self, pid: Pid, req: SyscallRequest) -> Result<SyscallOutcome, HostError> {
        let syscall = req.syscall();
        let (comm, uid, gid, container, ns) = {
            let proc = self.processes.get(pid).ok_or(HostError::UnknownProcess(pid))?;
            if !proc.is_running() {
                return Err(HostError::NotRunning(pid));
            }
            (proc.comm, proc.uid, proc.gid, proc.container.clone(), proc.namespace)
        };
        self.sid += 1;
        let sid = self.sid;

        // Allocate the read buffer before entry hooks: its address is
        // already visible there, but its state is still Empty.
        let (args, buffer) = match &req {
            SyscallRequest::Openat { path } => (
                CtxArgs {
                    filename: Some(path.clone()),
                    ..CtxArgs::default()
                },
                None,
            ),
            SyscallRequest::Read { fd, cap } => {
                let addr = {
                    let proc = self.processes.get_mut(pid).expect("checked above");
                    proc.alloc_buffer_addr()
                };
                self.buffers.allocate(addr, pid.0, *cap);
                (
                    CtxArgs {
                        fd: Some(*fd),
                        count: Some(*cap),
                        ..CtxArgs::default()
                    },
                    Some(addr),
                )
            }
            SyscallRequest::Write { fd, data } => (
                CtxArgs {
                    fd: Some(*fd),
                    count: Some(data.len()),
                    ..CtxArgs::default()
                },
                None,
            ),
            SyscallRequest::Execve { path } => (
                CtxArgs {
                    filename: Some(path.clone()),
                    ..CtxArgs::default()
                },
                None,
            ),
        };

        let enter_detail = match &req {
            SyscallRequest::Openat { path } => format!("sid={sid} name=openat path={path}"),
            SyscallRequest::Read { fd, cap } => format!(
                "sid={sid} name=read fd={fd} cap={cap} buf={:#x}",
                buffer.unwrap_or(0)
            ),
            SyscallRequest::Write { fd, data } => {
                format!("sid={sid} name=write fd={fd} len={}", data.len())
            }
            SyscallRequest::Execve { path } => format!("sid={sid} name=execve path={path}"),
        };
        self.log
            .emit(self.tick, EventKind::SyscallEnter, pid.0, container.as_str(), enter_detail);

        let mut ctx = EventContext {
            pid: pid.0,
            tgid: pid.0,
            uid,
            gid,
            comm,
            container: container.clone(),
            syscall,
            phase: Phase::Enter,
            args,
            buffer,
            natural_retval: None,
            sid,
        };
        let mut slot = OverrideSlot::default();

        let mut world = DispatchWorld {
            processes: &mut self.processes,
            buffers: &mut self.buffers,
            log: &mut self.log,
            tick: self.tick,
        };
        self.ebpf.dispatch(&mut world, &ctx, &mut slot);
        if !self.process_running(pid) {
            self.dead_dirty.insert(container);
            return Ok(SyscallOutcome { retval: 0, aborted: true });
        }

        // Kernel action.
        let natural: i64 = match &req {
            SyscallRequest::Openat { path } => {
                if self.fs.resolve(ns, path).is_some() {
                    let proc = self.processes.get_mut(pid).expect("running");
                    proc.alloc_fd(path.clone()) as i64
                } else {
                    ENOENT
                }
            }
            SyscallRequest::Read { fd, .. } => {
                let entry = self
                    .processes
                    .get(pid)
                    .and_then(|p| p.fds.get(fd).cloned());
                match entry {
                    None => EBADF,
                    Some(open) => match self.fs.resolve(ns, &open.path) {
                        None => ENOENT,
                        Some(file) => {
                            let data = file.contents[open.offset.min(file.contents.len())..].to_vec();
                            let n = self
                                .buffers
                                .kernel_fill(buffer.expect("read has buffer"), &data)
                                .expect("buffer just allocated");
                            let proc = self.processes.get_mut(pid).expect("running");
                            proc.fds.get_mut(fd).expect("fd exists").offset += n;
                            n as i64
                        }
                    },
                }
            }
            SyscallRequest::Write { fd, data } => {
                let entry = self
                    .processes
                    .get(pid)
                    .and_then(|p| p.fds.get(fd).cloned());
                match entry {
                    None => EBADF,
                    Some(open) => match self.fs.resolve_mut(ns, &open.path) {
                        None => ENOENT,
                        Some(file) => {
                            file.contents.extend_from_slice(data);
                            data.len() as i64
                        }
                    },
                }
            }
            SyscallRequest::Execve { path } => {
                if self.fs.resolve(ns, path).is_some() {
                    0
                } else {
                    ENOENT
                }
            }
        };

        ctx.phase = Phase::Exit;
        ctx.natural_retval = Some(natural);
        let mut world = DispatchWorld {
            processes: &mut self.processes,
            buffers: &mut self.buffers,
            log: &mut self.log,
            tick: self.tick,
        };
        self.ebpf.dispatch(&mut world, &ctx, &mut slot);
        if !self.process_running(pid) {
            self.dead_dirty.insert(container);
            return Ok(SyscallOutcome { retval: 0, aborted: true });
        }

        let overridden = slot.get().is_some();
        let retval = slot.get().unwrap_or(natural);
        self.log.emit(
            self.tick,
            EventKind::SyscallExit,
            pid.0,
            container.as_str(),
            format!("sid={sid} name={syscall} retval={retval} natural={natural} overridden={overridden}"),
        );

        let proc = self.processes.get_mut(pid).expect("running");
        if syscall == Syscall::Read {
            proc.completed_reads += 1;
            proc.last_read = Some((buffer.expect("read has buffer"), retval));
        }
        Ok(SyscallOutcome { retval, aborted: false })
    }

    fn process_running(&self, pid: Pid) -> bool {
        self.processes.get(pid).map(|p| p.is_running()).unwrap_or(false)
    }

    // ------------------------------------------------------------------
    // Event loop
    // ------------------------------------------------------------------

    fn schedule(&mut self, tick: u64, ev: Ev) {
        // Time never runs backward: anything aimed at the past lands now.
        let tick = tick.max(self.tick);
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(QueueEntry { tick, seq, ev }));
    }

    /// Run to quiescence or the tick limit. Returns the last tick executed.
    pub fn run(&mut self) -> u64 {
        loop {
            while self
                .queue
                .peek()
                .map(|Reverse(e)| e.tick == self.tick)
                .unwrap_or(false)
            {
                let Reverse(entry) = self.queue.pop().expect("peeked");
                self.handle_event(entry.ev);
            }
            self.orchestrator_tick(self.tick);
            match self.queue.peek() {
                None => break,
                Some(Reverse(entry)) if entry.tick > self.tick_limit => break,
                Some(Reverse(entry)) => self.tick = entry.tick,
            }
        }
        self.tick
    }

    fn handle_event(&mut self, ev: Ev) {
        match ev {
            Ev::Step { pid } => self.handle_step(pid),
            Ev::Respawn { container } => self.handle_respawn(container),
            Ev::Uplink { upf, frame, slice } => self.handle_uplink(upf, frame, slice),
            Ev::Downlink {
                upf,
                teid,
                payload,
                slice,
            } => self.handle_downlink(upf, teid, payload, slice),
        }
    }

    fn exit_process(&mut self, pid: Pid, reason: &str) {
        let Some(proc) = self.processes.get_mut(pid) else {
            return;
        };
        proc.state = ProcState::Exited;
        let container = proc.container.clone();
        let comm = proc.comm;
        self.log.emit(
            self.tick,
            EventKind::ProcExit,
            pid.0,
            container.as_str(),
            format!("reason={reason} comm={comm}"),
        );
        self.dead_dirty.insert(container);
    }

    fn handle_step(&mut self, pid: Pid) {
        let Some(proc) = self.processes.get(pid) else {
            return;
        };
        if !proc.is_running() {
            return;
        }
        if proc.term_pending {
            self.exit_process(pid, "sigterm");
            return;
        }
        let workload = self
            .workloads
            .get(&proc.workload)
            .cloned()
            .expect("workload validated at spawn");
        let mut pc = proc.pc;
        if pc >= workload.steps.len() {
            match workload.repeat {
                Repeat::Forever if !workload.steps.is_empty() => {
                    pc = 0;
                    let proc = self.processes.get_mut(pid).expect("running");
                    proc.iterations += 1;
                }
                _ => {
                    self.exit_process(pid, "finished");
                    return;
                }
            }
        }
        let step = workload.steps[pc].clone();
        {
            let proc = self.processes.get_mut(pid).expect("running");
            proc.pc = pc + 1;
        }

        let mut next_at = self.tick + 1;
        match step {
            Step::Openat { path } => {
                let _ = self.do_syscall(pid, SyscallRequest::Openat { path });
            }
            Step::Read { cap } => {
                let fd = self.processes.get(pid).and_then(|p| p.cur_fd).unwrap_or(-1);
                let _ = self.do_syscall(pid, SyscallRequest::Read { fd, cap });
            }
            Step::Write { data } => {
                let fd = self.processes.get(pid).and_then(|p| p.cur_fd).unwrap_or(-1);
                let _ = self.do_syscall(
                    pid,
                    SyscallRequest::Write {
                        fd,
                        data: data.into_bytes(),
                    },
                );
            }
            Step::Execve { path } => {
                let _ = self.do_syscall(pid, SyscallRequest::Execve { path });
            }
            Step::RunBuffer => self.run_buffer(pid),
            Step::Sleep { ticks } => {
                next_at = self.tick + ticks.max(1);
            }
            Step::InstallSession {
                upf,
                seid,
                teid,
                action,
            } => {
                let _ = self.install_session(
                    &ContainerId(upf),
                    PfcpSession { seid, teid, action },
                );
            }
            Step::Exit => {
                self.exit_process(pid, "exit_step");
                return;
            }
        }

        if self.process_running(pid) {
            self.schedule(next_at, Ev::Step { pid });
        }
    }

    /// Interpreter side of the script workload: execute what the last read
    /// left in the buffer, line by line. The byte count it trusts is the
    /// observed return value, overridden or not.
    fn run_buffer(&mut self, pid: Pid) {
        let Some(proc) = self.processes.get(pid) else {
            return;
        };
        let container = proc.container.clone();
        let Some((addr, retval)) = proc.last_read else {
            return;
        };
        let Some(buf) = self.buffers.get(addr) else {
            return;
        };
        let n = (retval.max(0) as usize).min(buf.contents.len());
        let text = String::from_utf8_lossy(&buf.contents[..n]).into_owned();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            self.log.emit(
                self.tick,
                EventKind::ExecCmd,
                pid.0,
                container.as_str(),
                format!("cmd={line}"),
            );
        }
    }

    fn handle_respawn(&mut self, container: ContainerId) {
        self.orchestrator.on_respawned(&container);
        self.log.emit(
            self.tick,
            EventKind::Orchestrator,
            0,
            container.as_str(),
            "action=respawn".to_string(),
        );
        let specs = self.spawn_specs.get(&container).cloned().unwrap_or_default();
        for spec in specs {
            // Respawned processes start on the next tick regardless of their
            // original start offset.
            if let Ok(pid) = self.spawn_process(&container, &spec.comm, spec.uid, spec.gid, &spec.workload) {
                self.schedule(self.tick + 1, Ev::Step { pid });
            }
        }
    }

    /// Orchestrator pass over containers whose processes died this tick.
    pub fn orchestrator_tick(&mut self, now: u64) {
        let dirty: Vec<ContainerId> = std::mem::take(&mut self.dead_dirty).into_iter().collect();
        for container in dirty {
            if !self.orchestrator.is_managed(&container)
                || !self.orchestrator.wants_decision(&container)
                || !self.processes.all_dead(&container)
            {
                continue;
            }
            match self.orchestrator.on_container_dead(&container, now) {
                Decision::Respawn { at } => {
                    let count = self.orchestrator.restart_count(&container);
                    self.log.emit(
                        now,
                        EventKind::Orchestrator,
                        0,
                        container.as_str(),
                        format!("action=restart_scheduled at={at} count={count}"),
                    );
                    self.schedule(at, Ev::Respawn { container });
                }
                Decision::CrashLoop => {
                    let count = self.orchestrator.restart_count(&container);
                    self.log.emit(
                        now,
                        EventKind::Orchestrator,
                        0,
                        container.as_str(),
                        format!("action=crash_loop_back_off count={count}"),
                    );
                }
            }
        }
    }
}
