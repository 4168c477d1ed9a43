//! Structural re-verification of an event log: syscall lifecycle ordering,
//! phase safety of the write/override helpers, and policy soundness of every
//! helper effect against the embedded allow-list meta records.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::log::{detail_field, EventKind, EventRecord, LOG_SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationClass {
    Ordering,
    PhaseSafety,
    PolicySoundness,
}

impl ViolationClass {
    pub fn name(self) -> &'static str {
        match self {
            ViolationClass::Ordering => "ordering",
            ViolationClass::PhaseSafety => "phase_safety",
            ViolationClass::PolicySoundness => "policy_soundness",
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("line {line}: malformed log record: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {class} violation: {msg}", class = .class.name())]
    Violation {
        line: usize,
        class: ViolationClass,
        msg: String,
    },
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ReplayStats {
    pub records: usize,
    pub syscalls: u64,
    pub helper_calls: u64,
}

#[derive(Debug, Clone)]
enum Allowed {
    Everything,
    Nothing,
    Set(BTreeSet<String>),
}

/// Verify one NDJSON event log. Returns counts on success, the first
/// violation otherwise.
pub fn replay_log(text: &str) -> Result<ReplayStats, ReplayError> {
    let mut stats = ReplayStats::default();
    // pid -> (sid, syscall name) of the in-flight syscall.
    let mut open_syscalls: BTreeMap<u32, (u64, String)> = BTreeMap::new();
    let mut dead_pids: BTreeSet<u32> = BTreeSet::new();
    let mut helper_policy: BTreeMap<String, Allowed> = BTreeMap::new();
    let mut last_tick: u64 = 0;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let rec: EventRecord = serde_json::from_str(line).map_err(|e| ReplayError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        stats.records += 1;

        if rec.tick < last_tick {
            return Err(ReplayError::Violation {
                line: lineno,
                class: ViolationClass::Ordering,
                msg: format!("tick {} after tick {last_tick}", rec.tick),
            });
        }
        last_tick = rec.tick;

        match rec.kind {
            EventKind::Meta => {
                if let Some(schema) = detail_field(&rec.detail, "schema") {
                    if schema.parse::<u32>().ok() != Some(LOG_SCHEMA_VERSION) {
                        return Err(ReplayError::Parse {
                            line: lineno,
                            msg: format!(
                                "log schema {schema} not supported (expected {LOG_SCHEMA_VERSION})"
                            ),
                        });
                    }
                }
            }
            EventKind::MetaPolicy => {
                let helpers = detail_field(&rec.detail, "helpers").unwrap_or("*");
                let allowed = match helpers {
                    "*" => Allowed::Everything,
                    "-" => Allowed::Nothing,
                    list => Allowed::Set(list.split(',').map(str::to_string).collect()),
                };
                helper_policy.insert(rec.container.clone(), allowed);
            }
            EventKind::SyscallEnter => {
                if dead_pids.contains(&rec.pid) {
                    return Err(ReplayError::Violation {
                        line: lineno,
                        class: ViolationClass::Ordering,
                        msg: format!("syscall_enter from dead pid {}", rec.pid),
                    });
                }
                let sid = parse_sid(&rec, lineno)?;
                let name = parse_name(&rec, lineno)?;
                if let Some((open_sid, _)) = open_syscalls.get(&rec.pid) {
                    return Err(ReplayError::Violation {
                        line: lineno,
                        class: ViolationClass::Ordering,
                        msg: format!(
                            "pid {} enters sid={sid} while sid={open_sid} is still open",
                            rec.pid
                        ),
                    });
                }
                open_syscalls.insert(rec.pid, (sid, name));
                stats.syscalls += 1;
            }
            EventKind::SyscallExit => {
                if dead_pids.contains(&rec.pid) {
                    return Err(ReplayError::Violation {
                        line: lineno,
                        class: ViolationClass::Ordering,
                        msg: format!("syscall_exit from dead pid {}", rec.pid),
                    });
                }
                let sid = parse_sid(&rec, lineno)?;
                let name = parse_name(&rec, lineno)?;
                match open_syscalls.remove(&rec.pid) {
                    Some((open_sid, open_name)) if open_sid == sid && open_name == name => {}
                    Some((open_sid, open_name)) => {
                        return Err(ReplayError::Violation {
                            line: lineno,
                            class: ViolationClass::Ordering,
                            msg: format!(
                                "pid {} exit sid={sid} name={name} does not match open sid={open_sid} name={open_name}",
                                rec.pid
                            ),
                        });
                    }
                    None => {
                        return Err(ReplayError::Violation {
                            line: lineno,
                            class: ViolationClass::Ordering,
                            msg: format!("pid {} exits sid={sid} with no enter", rec.pid),
                        });
                    }
                }
            }
            EventKind::Signal => {
                if detail_field(&rec.detail, "result") == Some("killed") {
                    dead_pids.insert(rec.pid);
                    // The in-flight syscall, if any, was aborted; no exit
                    // event will follow.
                    open_syscalls.remove(&rec.pid);
                }
            }
            EventKind::ProcExit => {
                dead_pids.insert(rec.pid);
                if let Some((sid, _)) = open_syscalls.remove(&rec.pid) {
                    return Err(ReplayError::Violation {
                        line: lineno,
                        class: ViolationClass::Ordering,
                        msg: format!("pid {} exited with syscall sid={sid} still open", rec.pid),
                    });
                }
            }
            EventKind::Helper => {
                stats.helper_calls += 1;
                let helper = detail_field(&rec.detail, "helper").ok_or(ReplayError::Parse {
                    line: lineno,
                    msg: "helper record without helper field".to_string(),
                })?;
                let phase = detail_field(&rec.detail, "phase").unwrap_or("");
                let status = detail_field(&rec.detail, "status").unwrap_or("");
                if (helper == "probe_write_user" || helper == "override_return")
                    && status == "ok"
                    && phase != "exit"
                {
                    return Err(ReplayError::Violation {
                        line: lineno,
                        class: ViolationClass::PhaseSafety,
                        msg: format!("{helper} effect in phase {phase}"),
                    });
                }
                let allowed = helper_policy
                    .get(&rec.container)
                    .cloned()
                    .unwrap_or(Allowed::Everything);
                let ok = match &allowed {
                    Allowed::Everything => true,
                    Allowed::Nothing => false,
                    Allowed::Set(set) => set.contains(helper),
                };
                if !ok {
                    return Err(ReplayError::Violation {
                        line: lineno,
                        class: ViolationClass::PolicySoundness,
                        msg: format!(
                            "container {} ran helper {helper} outside its allow-list",
                            rec.container
                        ),
                    });
                }
            }
            _ => {}
        }
    }

    // Anything still open at the end of the log was never completed nor
    // legitimately aborted.
    if let Some((pid, (sid, name))) = open_syscalls.into_iter().next() {
        return Err(ReplayError::Violation {
            line: stats.records,
            class: ViolationClass::Ordering,
            msg: format!("pid {pid} syscall sid={sid} name={name} never exited"),
        });
    }
    Ok(stats)
}

fn parse_sid(rec: &EventRecord, line: usize) -> Result<u64, ReplayError> {
    detail_field(&rec.detail, "sid")
        .and_then(|s| s.parse().ok())
        .ok_or(ReplayError::Parse {
            line,
            msg: "syscall record without sid".to_string(),
        })
}

fn parse_name(rec: &EventRecord, line: usize) -> Result<String, ReplayError> {
    detail_field(&rec.detail, "name")
        .map(str::to_string)
        .ok_or(ReplayError::Parse {
            line,
            msg: "syscall record without name".to_string(),
        })
}
