//! The modeled eBPF runtime: resident programs, attachment links, dispatch,
//! and helper semantics.
//!
//! Dispatch runs programs in attachment order (= load order), evaluates each
//! program's rules top-down, and applies helper effects immediately. A
//! failing helper aborts the rest of its rule and is recorded per call; the
//! program simply continues with its next rule, mirroring helper error-return
//! conventions.
//!
//! Maps are keyed by (owner, map id): sibling programs of one container that
//! declare the same map share the instance, the way pinned maps under
//! /sys/fs/bpf behave.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::hook::{HookPoint, Phase};
use super::map::{BpfMap, MapError, MapKey, MapValue};
use super::program::{
    BufTarget, Cond, EbpfProgram, EmitField, EventContext, HelperCall, KeyBind, LenBind,
    RecordKind, RuleOutcome, ValueBind,
};
use crate::kernel::container::ContainerId;
use crate::kernel::fs::{BufferError, BufferTable};
use crate::kernel::process::{Pid, ProcessTable, SignalResult, SIGKILL};
use crate::log::{EventKind, EventLog};

/// Record on a program's exfiltration/observation channel. Append-only,
/// ordered by tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExfilRecord {
    pub tick: u64,
    pub kind: RecordKind,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HelperError {
    #[error("buffer_empty")]
    BufferEmpty,
    #[error("no_buffer")]
    NoBuffer,
    #[error("payload_too_long")]
    PayloadTooLong,
    #[error("bad_fill_state")]
    BadFillState,
    #[error("phase_violation")]
    PhaseViolation,
    #[error("override_conflict")]
    OverrideConflict,
    #[error("map_full:{0}")]
    MapFull(String),
    #[error("map_miss:{0}")]
    MapMiss(String),
    #[error("map_type:{0}")]
    MapType(String),
    #[error("no_retval")]
    NoRetval,
    #[error("no_filename")]
    NoFilename,
    #[error("no_saved_addr")]
    NoSavedAddr,
    #[error("invalid_signo:{0}")]
    InvalidSigno(i32),
}

impl From<MapError> for HelperError {
    fn from(e: MapError) -> Self {
        match e {
            MapError::Full(m) => HelperError::MapFull(m),
            MapError::Miss(m) => HelperError::MapMiss(m),
            MapError::KeyType(m) | MapError::ValueType(m) => HelperError::MapType(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AttachError {
    #[error("program not loaded")]
    NotLoaded,
    #[error("hook does not match the program's declared hook")]
    HookMismatch,
    #[error("program already attached")]
    DoubleAttach,
    #[error("attach denied by capability gate")]
    AttachDenied,
}

/// Single-slot return-value override for one syscall instance. The second
/// post attempt fails; last-writer-wins is forbidden.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OverrideSlot {
    value: Option<i64>,
}

impl OverrideSlot {
    pub fn post(&mut self, value: i64) -> Result<(), HelperError> {
        if self.value.is_some() {
            return Err(HelperError::OverrideConflict);
        }
        self.value = Some(value);
        Ok(())
    }

    pub fn get(&self) -> Option<i64> {
        self.value
    }
}

pub type ProgId = usize;

#[derive(Debug)]
pub struct LoadedProgram {
    pub prog: EbpfProgram,
    pub channel: Vec<ExfilRecord>,
    pub attached: bool,
}

/// Kernel-side state the helpers act on during a dispatch.
pub struct DispatchWorld<'a> {
    pub processes: &'a mut ProcessTable,
    pub buffers: &'a mut BufferTable,
    pub log: &'a mut EventLog,
    pub tick: u64,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct DispatchOutcome {
    /// The context's process received SIGKILL during this dispatch.
    pub killed_current: bool,
}

/// Value left behind by the previous helper in a rule, consumable by the
/// next one (probe reads feed emit_record, lookups feed probe_write_user).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
enum Scratch {
    #[default]
    None,
    U64(u64),
    Bytes(Vec<u8>),
}

type MapKeyId = (ContainerId, String);

#[derive(Debug, Default)]
pub struct Runtime {
    programs: Vec<LoadedProgram>,
    maps: BTreeMap<MapKeyId, BpfMap>,
}

impl Runtime {
    pub fn new() -> Self {
        Runtime::default()
    }

    /// Existing shared map definition for (owner, id), if any.
    pub fn map_def(&self, owner: &ContainerId, id: &str) -> Option<&super::map::MapDef> {
        self.maps.get(&(owner.clone(), id.to_string())).map(|m| m.def())
    }

    /// Insert a program that already passed the verifier and the load gate.
    /// Its maps are created (or joined, when a sibling already pinned them);
    /// the program starts detached.
    pub fn insert_loaded(&mut self, prog: EbpfProgram) -> ProgId {
        for def in &prog.maps {
            self.maps
                .entry((prog.owner.clone(), def.id.clone()))
                .or_insert_with(|| BpfMap::new(def.clone()));
        }
        self.programs.push(LoadedProgram {
            prog,
            channel: Vec::new(),
            attached: false,
        });
        self.programs.len() - 1
    }

    pub fn attach(&mut self, id: ProgId, hook: &HookPoint) -> Result<ProgId, AttachError> {
        let lp = self.programs.get_mut(id).ok_or(AttachError::NotLoaded)?;
        if &lp.prog.hook != hook {
            return Err(AttachError::HookMismatch);
        }
        if lp.attached {
            return Err(AttachError::DoubleAttach);
        }
        lp.attached = true;
        Ok(id)
    }

    pub fn get(&self, id: ProgId) -> Option<&LoadedProgram> {
        self.programs.get(id)
    }

    pub fn find_by_name(&self, name: &str) -> Option<ProgId> {
        self.programs.iter().position(|lp| lp.prog.id == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LoadedProgram> {
        self.programs.iter()
    }

    pub fn map(&self, owner: &ContainerId, map_id: &str) -> Option<&BpfMap> {
        self.maps.get(&(owner.clone(), map_id.to_string()))
    }

    pub fn map_mut(&mut self, owner: &ContainerId, map_id: &str) -> Option<&mut BpfMap> {
        self.maps.get_mut(&(owner.clone(), map_id.to_string()))
    }

    /// Snapshot of all map states, for determinism checks.
    pub fn map_states(&self) -> &BTreeMap<MapKeyId, BpfMap> {
        &self.maps
    }

    pub fn channel(&self, id: ProgId) -> &[ExfilRecord] {
        self.programs
            .get(id)
            .map(|lp| lp.channel.as_slice())
            .unwrap_or(&[])
    }

    /// Run every attached program whose hook matches the event, in load
    /// order. Effects are applied immediately and logged. Even if the
    /// context's process dies mid-dispatch the remaining handlers still
    /// observe the event; the syscall aborts afterwards.
    pub fn dispatch(
        &mut self,
        world: &mut DispatchWorld<'_>,
        ctx: &EventContext,
        slot: &mut OverrideSlot,
    ) -> DispatchOutcome {
        let mut outcome = DispatchOutcome::default();
        for idx in 0..self.programs.len() {
            if !self.programs[idx].attached
                || !self.programs[idx].prog.hook.matches(ctx.syscall, ctx.phase)
            {
                continue;
            }
            let owner = self.programs[idx].prog.owner.clone();
            let rule_count = self.programs[idx].prog.rules().len();
            'rules: for rule_idx in 0..rule_count {
                let (matched, then) = {
                    let rule = &self.programs[idx].prog.rules()[rule_idx];
                    (self.rule_matches(&rule.when, ctx, &owner), rule.then)
                };
                if !matched {
                    continue;
                }
                let mut scratch = Scratch::None;
                let action_count = self.programs[idx].prog.rules()[rule_idx].actions.len();
                for action_idx in 0..action_count {
                    let call = self.programs[idx].prog.rules()[rule_idx].actions[action_idx].clone();
                    let result = self.run_helper(idx, &call, ctx, world, slot, &mut scratch);
                    let (status, extra) = match &result {
                        Ok(detail) => ("ok", detail.clone()),
                        Err(e) => ("err", format!("err={e}")),
                    };
                    let prog_id = &self.programs[idx].prog.id;
                    world.log.emit(
                        world.tick,
                        EventKind::Helper,
                        ctx.pid,
                        owner.as_str(),
                        format!(
                            "prog={prog_id} helper={} phase={} sid={} status={status}{}{}",
                            call.name(),
                            ctx.phase.name(),
                            ctx.sid,
                            if extra.is_empty() { "" } else { " " },
                            extra
                        ),
                    );
                    match result {
                        Ok(_) => {
                            if let HelperCall::SendSignal { signo } = call {
                                if signo == SIGKILL
                                    && !world
                                        .processes
                                        .get(Pid(ctx.pid))
                                        .map(|p| p.is_running())
                                        .unwrap_or(false)
                                {
                                    outcome.killed_current = true;
                                }
                            }
                        }
                        // A failed helper aborts the rest of this rule.
                        Err(_) => continue 'rules,
                    }
                }
                if then == RuleOutcome::Stop {
                    break 'rules;
                }
            }
        }
        outcome
    }

    fn rule_matches(&self, when: &[Cond], ctx: &EventContext, owner: &ContainerId) -> bool {
        when.iter().all(|cond| match cond {
            Cond::CommEquals(s) => ctx.comm.equals(s),
            Cond::CommContains(s) => ctx.comm.contains(s),
            Cond::SyscallIs(sc) => ctx.syscall == *sc,
            Cond::FilenameEndsWith(suffix) => ctx
                .args
                .filename
                .as_deref()
                .map(|f| f.ends_with(suffix))
                .unwrap_or(false),
            Cond::PidInMap(map) => self
                .map(owner, map)
                .map(|m| m.contains(&MapKey::U32(ctx.pid)))
                .unwrap_or(false),
            Cond::PhaseIs(p) => ctx.phase == *p,
        })
    }

    fn run_helper(
        &mut self,
        idx: usize,
        call: &HelperCall,
        ctx: &EventContext,
        world: &mut DispatchWorld<'_>,
        slot: &mut OverrideSlot,
        scratch: &mut Scratch,
    ) -> Result<String, HelperError> {
        let owner = self.programs[idx].prog.owner.clone();
        let owner = &owner;
        match call {
            HelperCall::GetCurrentPidTgid => {
                let v = ctx.pid_tgid_packed();
                *scratch = Scratch::U64(v);
                Ok(format!("value={v}"))
            }
            HelperCall::GetCurrentUidGid => {
                let v = ctx.uid_gid_packed();
                *scratch = Scratch::U64(v);
                Ok(format!("value={v}"))
            }
            HelperCall::GetCurrentComm => {
                *scratch = Scratch::Bytes(ctx.comm.bytes().to_vec());
                Ok(format!("comm={}", ctx.comm))
            }
            HelperCall::SendSignal { signo } => {
                let result = world
                    .processes
                    .deliver_signal(Pid(ctx.pid), *signo, world.tick, world.log)
                    .map_err(|_| HelperError::InvalidSigno(*signo))?;
                Ok(format!(
                    "signo={signo} result={}",
                    match result {
                        SignalResult::Delivered => "delivered",
                        SignalResult::Ignored => "ignored",
                    }
                ))
            }
            HelperCall::ProbeReadUser { len } => {
                let addr = ctx.buffer.ok_or(HelperError::NoBuffer)?;
                let len = match len {
                    LenBind::Lit(n) => *n as usize,
                    LenBind::NaturalRetval => {
                        let rv = ctx.natural_retval.ok_or(HelperError::NoRetval)?;
                        rv.max(0) as usize
                    }
                };
                let bytes = world.buffers.probe_read(addr, len).map_err(|e| match e {
                    BufferError::Empty => HelperError::BufferEmpty,
                    _ => HelperError::NoBuffer,
                })?;
                let n = bytes.len();
                *scratch = Scratch::Bytes(bytes);
                Ok(format!("addr={addr:#x} len={n}"))
            }
            HelperCall::ProbeReadUserStr => {
                let name = ctx.args.filename.clone().ok_or(HelperError::NoFilename)?;
                let detail = format!("str={name}");
                *scratch = Scratch::Bytes(name.into_bytes());
                Ok(detail)
            }
            HelperCall::ProbeWriteUser { target, payload } => {
                if ctx.phase != Phase::Exit {
                    return Err(HelperError::PhaseViolation);
                }
                let addr = match target {
                    BufTarget::Ctx => ctx.buffer.ok_or(HelperError::NoBuffer)?,
                    BufTarget::SavedAddr => match scratch {
                        Scratch::U64(v) => *v,
                        _ => return Err(HelperError::NoSavedAddr),
                    },
                };
                let prev = world.buffers.probe_write(addr, payload).map_err(|e| match e {
                    BufferError::PayloadTooLong => HelperError::PayloadTooLong,
                    BufferError::BadFillState => HelperError::BadFillState,
                    _ => HelperError::NoBuffer,
                })?;
                Ok(format!(
                    "addr={addr:#x} len={} fill_prev={}",
                    payload.len(),
                    prev.name()
                ))
            }
            HelperCall::OverrideReturn { value } => {
                if ctx.phase != Phase::Exit {
                    return Err(HelperError::PhaseViolation);
                }
                slot.post(*value)?;
                Ok(format!("value={value}"))
            }
            HelperCall::MapUpdate { map, key, value } => {
                let key = resolve_key(key, ctx);
                let value = match value {
                    ValueBind::Lit(v) => MapValue::U64(*v),
                    ValueBind::BufferAddr => {
                        MapValue::U64(ctx.buffer.ok_or(HelperError::NoBuffer)?)
                    }
                };
                let detail = format!("map={map} key={} value={}", fmt_key(&key), fmt_value(&value));
                self.shared_map_mut(owner, map)?.update(key, value)?;
                Ok(detail)
            }
            HelperCall::MapLookup { map, key } => {
                let key = resolve_key(key, ctx);
                let value = self.shared_map_mut(owner, map)?.lookup(&key)?.clone();
                let detail = format!("map={map} key={} value={}", fmt_key(&key), fmt_value(&value));
                *scratch = match value {
                    MapValue::U64(v) => Scratch::U64(v),
                    MapValue::Bytes(b) => Scratch::Bytes(b),
                };
                Ok(detail)
            }
            HelperCall::MapDelete { map, key } => {
                let key = resolve_key(key, ctx);
                let detail = format!("map={map} key={}", fmt_key(&key));
                self.shared_map_mut(owner, map)?.delete(&key)?;
                Ok(detail)
            }
            HelperCall::EmitRecord { kind, fields } => {
                let data = render_fields(fields, ctx, scratch);
                let n = data.len();
                let lp = &mut self.programs[idx];
                lp.channel.push(ExfilRecord {
                    tick: world.tick,
                    kind: *kind,
                    data,
                });
                world.log.emit(
                    world.tick,
                    EventKind::Exfil,
                    ctx.pid,
                    owner.as_str(),
                    format!("prog={} kind={} bytes={n}", lp.prog.id, kind.name()),
                );
                Ok(format!("kind={} bytes={n}", kind.name()))
            }
        }
    }

    fn shared_map_mut(&mut self, owner: &ContainerId, map: &str) -> Result<&mut BpfMap, HelperError> {
        self.maps
            .get_mut(&(owner.clone(), map.to_string()))
            .ok_or_else(|| HelperError::MapMiss(map.to_string()))
    }
}

fn resolve_key(bind: &KeyBind, ctx: &EventContext) -> MapKey {
    match bind {
        KeyBind::Pid => MapKey::U32(ctx.pid),
        KeyBind::Comm => MapKey::B16(ctx.comm.raw()),
        KeyBind::Lit(v) => MapKey::U64(*v),
    }
}

fn fmt_key(key: &MapKey) -> String {
    match key {
        MapKey::U32(v) => v.to_string(),
        MapKey::U64(v) => v.to_string(),
        MapKey::B16(b) => {
            String::from_utf8_lossy(&b[..b.iter().position(|&c| c == 0).unwrap_or(b.len())])
                .into_owned()
        }
    }
}

fn fmt_value(value: &MapValue) -> String {
    match value {
        MapValue::U64(v) => v.to_string(),
        MapValue::Bytes(b) => format!("bytes[{}]", b.len()),
    }
}

fn render_fields(fields: &[EmitField], ctx: &EventContext, scratch: &Scratch) -> Vec<u8> {
    let mut segments: Vec<Vec<u8>> = Vec::with_capacity(fields.len());
    for field in fields {
        segments.push(match field {
            EmitField::Pid => format!("pid={}", ctx.pid).into_bytes(),
            EmitField::UidGid => format!("uid_gid={}", ctx.uid_gid_packed()).into_bytes(),
            EmitField::Comm => format!("comm={}", ctx.comm).into_bytes(),
            EmitField::SyscallName => format!("syscall={}", ctx.syscall).into_bytes(),
            EmitField::LastBytes => match scratch {
                Scratch::Bytes(b) => b.clone(),
                Scratch::U64(v) => v.to_string().into_bytes(),
                Scratch::None => Vec::new(),
            },
            EmitField::Lit(s) => s.clone().into_bytes(),
        });
    }
    segments.join(&b' ')
}

impl fmt::Debug for DispatchWorld<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DispatchWorld").field("tick", &self.tick).finish()
    }
}
