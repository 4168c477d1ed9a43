//! PFCP-installed forwarding state, kept in the pipeline's BPF session map.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::gtp::NodeId;
use crate::ebpf::map::{BpfMap, MapError, MapKey, MapValue};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum SessionAction {
    Forward { peer: String },
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PfcpSession {
    pub seid: u64,
    pub teid: u32,
    pub action: SessionAction,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error("container {0} is not a UPF")]
    NotAUpf(String),
    #[error("TEID {0} already installed on this UPF")]
    DuplicateTeid(u32),
    #[error("TEID zero is not installable")]
    ZeroTeid,
    #[error("UPF pipeline is not loaded; no session map")]
    NoPipeline,
    #[error("session map error: {0}")]
    Map(#[from] MapError),
}

// Value encoding inside the session map: one action byte, then the peer id.
const ACTION_FORWARD: u8 = 1;
const ACTION_DROP: u8 = 2;

pub fn encode_session_value(session: &PfcpSession) -> MapValue {
    let mut bytes = Vec::new();
    match &session.action {
        SessionAction::Forward { peer } => {
            bytes.push(ACTION_FORWARD);
            bytes.extend_from_slice(peer.as_bytes());
        }
        SessionAction::Drop => bytes.push(ACTION_DROP),
    }
    MapValue::Bytes(bytes)
}

pub fn decode_session_value(value: &MapValue) -> Option<SessionAction> {
    let MapValue::Bytes(bytes) = value else {
        return None;
    };
    match bytes.split_first()? {
        (&ACTION_FORWARD, peer) => Some(SessionAction::Forward {
            peer: String::from_utf8_lossy(peer).into_owned(),
        }),
        (&ACTION_DROP, _) => Some(SessionAction::Drop),
        _ => None,
    }
}

/// Install a session into a UPF's session map. TEIDs are unique per UPF and
/// only ever written through this N4 path.
pub fn install_into_map(map: &mut BpfMap, session: &PfcpSession) -> Result<(), SessionError> {
    if session.teid == 0 {
        return Err(SessionError::ZeroTeid);
    }
    let key = MapKey::U32(session.teid);
    if map.contains(&key) {
        return Err(SessionError::DuplicateTeid(session.teid));
    }
    map.update(key, encode_session_value(session))?;
    Ok(())
}

pub fn remove_from_map(map: &mut BpfMap, teid: u32) -> Result<(), SessionError> {
    map.delete(&MapKey::U32(teid))?;
    Ok(())
}

/// Session-table lookup as the XDP program performs it.
pub fn lookup_action(map: &BpfMap, teid: u32) -> Option<SessionAction> {
    map.lookup(&MapKey::U32(teid))
        .ok()
        .and_then(decode_session_value)
}

/// Per-UPF user-plane state outside the map itself.
#[derive(Debug, Clone)]
pub struct UpfNode {
    pub container: crate::kernel::container::ContainerId,
    pub slice: super::gtp::SliceId,
    /// Program id of the attached XDP pipeline, once loaded.
    pub pipeline: Option<usize>,
    /// RAN-side peer for downlink redirects.
    pub gnb_peer: NodeId,
}
