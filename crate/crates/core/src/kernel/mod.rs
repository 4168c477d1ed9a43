//! Deterministic model of a shared host kernel: containers, processes,
//! syscalls with eBPF hook points, signals, a namespaced filesystem, and a
//! restart orchestrator.

pub mod container;
pub mod fs;
pub mod host;
pub mod orchestrator;
pub mod process;
pub mod workload;

pub use container::{Capability, Container, ContainerId, ContainerSpec, Namespace};
pub use fs::{FileNode, FillState, UserBuffer};
pub use host::{Host, HostError, ProcessSpec, SyscallOutcome, SyscallRequest};
pub use orchestrator::{ContainerStatus, OrchestratorConfig};
pub use process::{Comm, Pid, ProcState, Process, SignalResult, SIGKILL, SIGTERM};
pub use workload::{Repeat, Step, Workload};
