//! Load-time program verification: structural checks plus the capability
//! and policy gate.

use std::collections::BTreeSet;

use thiserror::Error;

use super::map::{KeyType, ValueType};
use super::program::{EbpfProgram, HelperCall, HelperName, KeyBind, ProgramBody, ValueBind};
use crate::policy::DenyReason;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MalformedReason {
    #[error("helper {helper} references undeclared map {map}")]
    UnknownMap { helper: HelperName, map: String },
    #[error("duplicate map id {0}")]
    DuplicateMap(String),
    #[error("key binding does not match key type of map {0}")]
    KeyTypeMismatch(String),
    #[error("value binding does not match value type of map {0}")]
    ValueTypeMismatch(String),
    #[error("predicate references undeclared map {0}")]
    PredicateUnknownMap(String),
    #[error("pid_in_map requires a u32-keyed map, got {0}")]
    PredicateKeyType(String),
    #[error("declared helper set does not match the helpers used by the rules")]
    DeclaredHelperMismatch,
    #[error("xdp forwarder must reference a declared u32->bytes session map")]
    BadForwarderMap,
    #[error("map {0} is already pinned by a sibling program with a different definition")]
    MapDefConflict(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error("malformed program: {0}")]
    Malformed(#[from] MalformedReason),
    #[error("load denied: {0}")]
    Denied(DenyReason),
}

fn key_bind_type(bind: &KeyBind) -> KeyType {
    match bind {
        KeyBind::Pid => KeyType::U32,
        KeyBind::Comm => KeyType::Bytes16,
        KeyBind::Lit(_) => KeyType::U64,
    }
}

fn value_bind_type(bind: &ValueBind) -> ValueType {
    match bind {
        ValueBind::Lit(_) | ValueBind::BufferAddr => ValueType::U64,
    }
}

/// Structural verification. Returns the recomputed helper set on success;
/// if the program declared a helper set it must match exactly.
pub fn verify_structure(prog: &EbpfProgram) -> Result<BTreeSet<HelperName>, MalformedReason> {
    let mut seen = BTreeSet::new();
    for def in &prog.maps {
        if !seen.insert(def.id.clone()) {
            return Err(MalformedReason::DuplicateMap(def.id.clone()));
        }
    }
    let map_def = |id: &str| prog.maps.iter().find(|d| d.id == id);

    match &prog.body {
        ProgramBody::XdpForwarder { session_map } => {
            let def = map_def(session_map).ok_or(MalformedReason::BadForwarderMap)?;
            if def.key != KeyType::U32 || def.value != ValueType::Bytes {
                return Err(MalformedReason::BadForwarderMap);
            }
        }
        ProgramBody::Rules(rules) => {
            for rule in rules {
                for cond in &rule.when {
                    if let super::program::Cond::PidInMap(map) = cond {
                        let def = map_def(map)
                            .ok_or_else(|| MalformedReason::PredicateUnknownMap(map.clone()))?;
                        if def.key != KeyType::U32 {
                            return Err(MalformedReason::PredicateKeyType(map.clone()));
                        }
                    }
                }
                for call in &rule.actions {
                    if let Some(map) = call.map_ref() {
                        let def = map_def(map).ok_or_else(|| MalformedReason::UnknownMap {
                            helper: call.name(),
                            map: map.to_string(),
                        })?;
                        match call {
                            HelperCall::MapUpdate { key, value, .. } => {
                                if key_bind_type(key) != def.key {
                                    return Err(MalformedReason::KeyTypeMismatch(map.to_string()));
                                }
                                if value_bind_type(value) != def.value {
                                    return Err(MalformedReason::ValueTypeMismatch(
                                        map.to_string(),
                                    ));
                                }
                            }
                            HelperCall::MapLookup { key, .. } | HelperCall::MapDelete { key, .. }
                                if key_bind_type(key) != def.key =>
                            {
                                return Err(MalformedReason::KeyTypeMismatch(map.to_string()));
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
    }

    let computed = prog.computed_helpers();
    if !prog.declared_helpers.is_empty() && prog.declared_helpers != computed {
        return Err(MalformedReason::DeclaredHelperMismatch);
    }
    Ok(computed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ebpf::hook::HookPoint;
    use crate::ebpf::map::MapDef;
    use crate::ebpf::program::{Cond, Rule};

    fn base_prog(body: ProgramBody, maps: Vec<MapDef>) -> EbpfProgram {
        EbpfProgram {
            id: "p".into(),
            owner: "eupf1".into(),
            hook: HookPoint::RawTracepointSysEnter,
            body,
            declared_helpers: BTreeSet::new(),
            maps,
        }
    }

    #[test]
    fn unresolved_map_reference_rejected() {
        let prog = base_prog(
            ProgramBody::Rules(vec![Rule::new(
                vec![],
                vec![HelperCall::MapUpdate {
                    map: "ghost".into(),
                    key: KeyBind::Pid,
                    value: ValueBind::Lit(1),
                }],
            )]),
            vec![],
        );
        assert!(matches!(
            verify_structure(&prog),
            Err(MalformedReason::UnknownMap { .. })
        ));
    }

    #[test]
    fn key_type_mismatch_rejected() {
        let prog = base_prog(
            ProgramBody::Rules(vec![Rule::new(
                vec![],
                vec![HelperCall::MapUpdate {
                    map: "m".into(),
                    key: KeyBind::Comm,
                    value: ValueBind::Lit(1),
                }],
            )]),
            vec![MapDef {
                id: "m".into(),
                key: KeyType::U32,
                value: ValueType::U64,
                capacity: 8,
            }],
        );
        assert_eq!(
            verify_structure(&prog),
            Err(MalformedReason::KeyTypeMismatch("m".into()))
        );
    }

    #[test]
    fn declared_helpers_must_match_computed() {
        let mut prog = base_prog(
            ProgramBody::Rules(vec![Rule::new(vec![], vec![HelperCall::GetCurrentComm])]),
            vec![],
        );
        prog.declared_helpers = [HelperName::GetCurrentComm, HelperName::SendSignal]
            .into_iter()
            .collect();
        assert_eq!(
            verify_structure(&prog),
            Err(MalformedReason::DeclaredHelperMismatch)
        );

        prog.declared_helpers = [HelperName::GetCurrentComm].into_iter().collect();
        let computed = verify_structure(&prog).unwrap();
        assert_eq!(computed, prog.declared_helpers);
    }

    #[test]
    fn pid_in_map_predicate_checked() {
        let prog = base_prog(
            ProgramBody::Rules(vec![Rule::new(
                vec![Cond::PidInMap("nope".into())],
                vec![],
            )]),
            vec![],
        );
        assert_eq!(
            verify_structure(&prog),
            Err(MalformedReason::PredicateUnknownMap("nope".into()))
        );
    }

    #[test]
    fn forwarder_requires_proper_session_map() {
        let ok = base_prog(
            ProgramBody::XdpForwarder {
                session_map: "sessions".into(),
            },
            vec![MapDef {
                id: "sessions".into(),
                key: KeyType::U32,
                value: ValueType::Bytes,
                capacity: 64,
            }],
        );
        assert!(verify_structure(&ok).is_ok());

        let bad = base_prog(
            ProgramBody::XdpForwarder {
                session_map: "sessions".into(),
            },
            vec![],
        );
        assert_eq!(verify_structure(&bad), Err(MalformedReason::BadForwarderMap));
    }
}
