//! Hook points a program can attach to, with their canonical section names.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Syscalls the host model executes and the hooks can observe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Syscall {
    Openat,
    Read,
    Write,
    Execve,
}

impl Syscall {
    pub fn name(self) -> &'static str {
        match self {
            Syscall::Openat => "openat",
            Syscall::Read => "read",
            Syscall::Write => "write",
            Syscall::Execve => "execve",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "openat" => Some(Syscall::Openat),
            "read" => Some(Syscall::Read),
            "write" => Some(Syscall::Write),
            "execve" => Some(Syscall::Execve),
            _ => None,
        }
    }
}

impl fmt::Display for Syscall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Syscall lifecycle side a hook fires on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Enter,
    Exit,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Enter => "enter",
            Phase::Exit => "exit",
        }
    }
}

#[derive(Debug, Error)]
#[error("unknown hook name: {0}")]
pub struct HookParseError(pub String);

/// Attachment point. The canonical name round-trips through `parse`, and
/// uniquely determines the (kind, target) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HookPoint {
    /// `raw_tracepoint/sys_enter` — every syscall entry, host-wide.
    RawTracepointSysEnter,
    /// `tracepoint/sys_exit` or `tracepoint/sys_exit_<name>`.
    TracepointSysExit(Option<Syscall>),
    /// `kprobe/__x64_sys_<name>` — entry of one syscall.
    Kprobe(Syscall),
    /// `kretprobe/__x64_sys_<name>` — exit of one syscall.
    Kretprobe(Syscall),
    /// `xdp` — driver-level packet path, not on the syscall lifecycle.
    Xdp,
}

impl HookPoint {
    pub fn canonical_name(&self) -> String {
        match self {
            HookPoint::RawTracepointSysEnter => "raw_tracepoint/sys_enter".to_string(),
            HookPoint::TracepointSysExit(None) => "tracepoint/sys_exit".to_string(),
            HookPoint::TracepointSysExit(Some(s)) => format!("tracepoint/sys_exit_{s}"),
            HookPoint::Kprobe(s) => format!("kprobe/__x64_sys_{s}"),
            HookPoint::Kretprobe(s) => format!("kretprobe/__x64_sys_{s}"),
            HookPoint::Xdp => "xdp".to_string(),
        }
    }

    pub fn parse(name: &str) -> Result<Self, HookParseError> {
        if name == "raw_tracepoint/sys_enter" {
            return Ok(HookPoint::RawTracepointSysEnter);
        }
        if name == "tracepoint/sys_exit" {
            return Ok(HookPoint::TracepointSysExit(None));
        }
        if name == "xdp" {
            return Ok(HookPoint::Xdp);
        }
        if let Some(rest) = name.strip_prefix("tracepoint/sys_exit_") {
            if let Some(sc) = Syscall::parse(rest) {
                return Ok(HookPoint::TracepointSysExit(Some(sc)));
            }
        }
        if let Some(rest) = name.strip_prefix("kprobe/__x64_sys_") {
            if let Some(sc) = Syscall::parse(rest) {
                return Ok(HookPoint::Kprobe(sc));
            }
        }
        if let Some(rest) = name.strip_prefix("kretprobe/__x64_sys_") {
            if let Some(sc) = Syscall::parse(rest) {
                return Ok(HookPoint::Kretprobe(sc));
            }
        }
        Err(HookParseError(name.to_string()))
    }

    /// Does this hook fire for the given syscall event?
    pub fn matches(&self, syscall: Syscall, phase: Phase) -> bool {
        match self {
            HookPoint::RawTracepointSysEnter => phase == Phase::Enter,
            HookPoint::TracepointSysExit(None) => phase == Phase::Exit,
            HookPoint::TracepointSysExit(Some(s)) => phase == Phase::Exit && *s == syscall,
            HookPoint::Kprobe(s) => phase == Phase::Enter && *s == syscall,
            HookPoint::Kretprobe(s) => phase == Phase::Exit && *s == syscall,
            HookPoint::Xdp => false,
        }
    }
}

impl fmt::Display for HookPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_name())
    }
}
