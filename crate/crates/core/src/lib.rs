//! Deterministic simulator of a multi-container host running an
//! eBPF-accelerated 5G user plane.
//!
//! One shared kernel model executes container workloads syscall by syscall,
//! with eBPF hook points on entry and exit. A modeled eBPF runtime loads
//! declarative programs through a verifier-style gate, dispatches them
//! host-wide, and applies helper effects (signals, user-memory writes,
//! return-value overrides, map mutations, channel output). On the data
//! plane, two eUPF containers run an XDP pipeline doing GTP-U parse, TEID
//! lookup, and forwarding over PFCP-installed sessions. Four cross-container
//! attack scenarios and a load-time policy engine sit on top, and a scenario
//! harness runs the whole thing reproducibly: fixed seed in, byte-identical
//! event log out.
//!
//! Module map:
//! - [`kernel`] — containers, processes, syscalls, signals, filesystem,
//!   orchestrator, and the single-threaded event loop ([`kernel::Host`]).
//! - [`ebpf`] — programs, hooks, maps, verifier, and dispatch.
//! - [`upf`] — GTP framing, session tables, the XDP pipeline, topology.
//! - [`attacks`] — the four attack builders and their victim workloads.
//! - [`policy`] — load-time enforcement and the attack/policy outcome matrix.
//! - [`scenario`] — config parsing, the runner, reports, and log replay.

pub mod attacks;
pub mod ebpf;
pub mod kernel;
pub mod log;
pub mod policy;
pub mod rng;
pub mod scenario;
pub mod upf;

pub use attacks::{AttackKind, AttackSpec};
pub use ebpf::{EbpfProgram, HelperName, HookPoint, Phase, Syscall};
pub use kernel::{Capability, ContainerId, Host, Pid};
pub use log::{EventKind, EventLog, EventRecord};
pub use policy::{DenyReason, Policy, PolicyMode};
pub use upf::{PfcpSession, SessionAction, XdpVerdict};
