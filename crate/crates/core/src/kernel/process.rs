//! Processes: pids, comms, credentials, fd tables, and signal handling.

use std::collections::BTreeMap;
use std::fmt;

use super::container::{ContainerId, Namespace};
use crate::log::{EventKind, EventLog};

pub const TASK_COMM_LEN: usize = 16;

/// Host-global process id. Allocated from a monotonic counter; never reused
/// within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pid(pub u32);

impl fmt::Display for Pid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Fixed 16-byte process name, NUL-terminated. Longer names are truncated to
/// 15 bytes plus the terminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Comm([u8; TASK_COMM_LEN]);

impl Comm {
    pub fn new(name: &str) -> Self {
        let mut buf = [0u8; TASK_COMM_LEN];
        let bytes = name.as_bytes();
        let n = bytes.len().min(TASK_COMM_LEN - 1);
        buf[..n].copy_from_slice(&bytes[..n]);
        Comm(buf)
    }

    pub fn raw(&self) -> [u8; TASK_COMM_LEN] {
        self.0
    }

    /// Content bytes up to the first NUL.
    pub fn bytes(&self) -> &[u8] {
        let len = self.0.iter().position(|&b| b == 0).unwrap_or(TASK_COMM_LEN);
        &self.0[..len]
    }

    pub fn as_str(&self) -> std::borrow::Cow<'_, str> {
        String::from_utf8_lossy(self.bytes())
    }

    pub fn equals(&self, s: &str) -> bool {
        self.bytes() == s.as_bytes()
    }

    pub fn contains(&self, s: &str) -> bool {
        if s.is_empty() {
            return true;
        }
        if s.len() > self.bytes().len() {
            return false;
        }
        self.bytes().windows(s.len()).any(|w| w == s.as_bytes())
    }
}

impl fmt::Display for Comm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcState {
    Running,
    Killed,
    Exited,
}

impl ProcState {
    pub fn name(self) -> &'static str {
        match self {
            ProcState::Running => "running",
            ProcState::Killed => "killed",
            ProcState::Exited => "exited",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OpenFile {
    pub path: String,
    pub offset: usize,
}

#[derive(Debug, Clone)]
pub struct Process {
    pub pid: Pid,
    pub tgid: Pid,
    pub uid: u32,
    pub gid: u32,
    pub comm: Comm,
    pub container: ContainerId,
    pub namespace: Namespace,
    pub state: ProcState,
    /// Name of the workload script driving this process.
    pub workload: String,
    /// Position in the workload's step list.
    pub pc: usize,
    /// Completed passes over the step list (for repeat=forever scripts).
    pub iterations: u64,
    pub fds: BTreeMap<i32, OpenFile>,
    next_fd: i32,
    /// Most recently opened fd; workload `read`/`write` steps target it.
    pub cur_fd: Option<i32>,
    /// Address and observed return value of the most recent read.
    pub last_read: Option<(u64, i64)>,
    /// Per-process allocation counter for user buffer addresses.
    pub buffer_allocs: u32,
    /// SIGTERM received; exit at the next scheduling point.
    pub term_pending: bool,
    /// Counts completed read syscalls in this incarnation.
    pub completed_reads: u64,
}

impl Process {
    pub fn new(
        pid: Pid,
        uid: u32,
        gid: u32,
        comm: Comm,
        container: ContainerId,
        namespace: Namespace,
        workload: String,
    ) -> Self {
        Process {
            pid,
            tgid: pid,
            uid,
            gid,
            comm,
            container,
            namespace,
            state: ProcState::Running,
            workload,
            pc: 0,
            iterations: 0,
            fds: BTreeMap::new(),
            next_fd: 3,
            cur_fd: None,
            last_read: None,
            buffer_allocs: 0,
            term_pending: false,
            completed_reads: 0,
        }
    }

    pub fn is_running(&self) -> bool {
        self.state == ProcState::Running
    }

    pub fn alloc_fd(&mut self, path: String) -> i32 {
        let fd = self.next_fd;
        self.next_fd += 1;
        self.fds.insert(fd, OpenFile { path, offset: 0 });
        self.cur_fd = Some(fd);
        fd
    }

    /// Buffer address token: unique per (pid, allocation).
    pub fn alloc_buffer_addr(&mut self) -> u64 {
        self.buffer_allocs += 1;
        ((self.pid.0 as u64) << 32) | self.buffer_allocs as u64
    }

    pub fn uid_gid_packed(&self) -> u64 {
        ((self.gid as u64) << 32) | self.uid as u64
    }

    pub fn pid_tgid_packed(&self) -> u64 {
        ((self.tgid.0 as u64) << 32) | self.pid.0 as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalResult {
    Delivered,
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SignalError {
    #[error("unsupported signal number {0}")]
    UnsupportedSigno(i32),
}

pub const SIGKILL: i32 = 9;
pub const SIGTERM: i32 = 15;

/// Live process table.
#[derive(Debug, Default)]
pub struct ProcessTable {
    procs: BTreeMap<Pid, Process>,
    next_pid: u32,
}

impl ProcessTable {
    pub fn new() -> Self {
        ProcessTable {
            procs: BTreeMap::new(),
            next_pid: 1,
        }
    }

    pub fn alloc_pid(&mut self) -> Pid {
        let pid = Pid(self.next_pid);
        self.next_pid += 1;
        pid
    }

    pub fn insert(&mut self, proc: Process) {
        self.procs.insert(proc.pid, proc);
    }

    pub fn get(&self, pid: Pid) -> Option<&Process> {
        self.procs.get(&pid)
    }

    pub fn get_mut(&mut self, pid: Pid) -> Option<&mut Process> {
        self.procs.get_mut(&pid)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Process> {
        self.procs.values()
    }

    /// All processes of a container are dead (and at least one ever existed).
    pub fn all_dead(&self, container: &ContainerId) -> bool {
        let mut saw = false;
        for p in self.procs.values().filter(|p| &p.container == container) {
            saw = true;
            if p.is_running() {
                return false;
            }
        }
        saw
    }

    /// Deliver SIGKILL or SIGTERM. SIGKILL takes effect immediately; SIGTERM
    /// is flagged and honored at the process's next scheduling point.
    pub fn deliver_signal(
        &mut self,
        target: Pid,
        signo: i32,
        tick: u64,
        log: &mut EventLog,
    ) -> Result<SignalResult, SignalError> {
        if signo != SIGKILL && signo != SIGTERM {
            return Err(SignalError::UnsupportedSigno(signo));
        }
        let Some(proc) = self.procs.get_mut(&target) else {
            return Ok(SignalResult::Ignored);
        };
        if !proc.is_running() {
            return Ok(SignalResult::Ignored);
        }
        let container = proc.container.clone();
        match signo {
            SIGKILL => {
                proc.state = ProcState::Killed;
                log.emit(
                    tick,
                    EventKind::Signal,
                    target.0,
                    container.as_str(),
                    format!("signo=9 result=killed comm={}", proc.comm),
                );
            }
            _ => {
                proc.term_pending = true;
                log.emit(
                    tick,
                    EventKind::Signal,
                    target.0,
                    container.as_str(),
                    format!("signo=15 result=term_pending comm={}", proc.comm),
                );
            }
        }
        Ok(SignalResult::Delivered)
    }
}
