//! The XDP forwarding pipeline: GTP header parsing, TEID lookup, verdict.

use serde::Serialize;

use super::gtp::{self, FrameKind, NodeId};
use super::session::{lookup_action, SessionAction};
use crate::ebpf::map::BpfMap;

/// Driver-level verdict. Exactly one per packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum XdpVerdict {
    /// Hand the frame to the regular stack (non-GTP traffic).
    Pass,
    Drop,
    /// Forward to a peer with the given bytes (decapsulated payload on
    /// uplink, encapsulated frame on downlink).
    Redirect { peer: NodeId, payload: Vec<u8> },
}

impl XdpVerdict {
    pub fn name(&self) -> &'static str {
        match self {
            XdpVerdict::Pass => "pass",
            XdpVerdict::Drop => "drop",
            XdpVerdict::Redirect { .. } => "redirect",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct VerdictCounters {
    pub pass: u64,
    pub drop: u64,
    pub redirect: u64,
}

impl VerdictCounters {
    pub fn count(&mut self, verdict: &XdpVerdict) {
        match verdict {
            XdpVerdict::Pass => self.pass += 1,
            XdpVerdict::Drop => self.drop += 1,
            XdpVerdict::Redirect { .. } => self.redirect += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.pass + self.drop + self.redirect
    }
}

/// Uplink (N3) ingress: classify, parse, look up the TEID, decapsulate.
/// Malformed GTP never passes; a session miss or an installed drop rule
/// drops the frame.
pub fn xdp_ingress_uplink(session_map: &BpfMap, frame: &[u8]) -> XdpVerdict {
    match gtp::classify_frame(frame) {
        FrameKind::NonGtp => XdpVerdict::Pass,
        FrameKind::Gtp(Err(_)) => XdpVerdict::Drop,
        FrameKind::Gtp(Ok(parsed)) => match lookup_action(session_map, parsed.teid) {
            Some(SessionAction::Forward { peer }) => XdpVerdict::Redirect {
                peer: NodeId(peer),
                payload: parsed.payload.to_vec(),
            },
            Some(SessionAction::Drop) | None => XdpVerdict::Drop,
        },
    }
}

/// Downlink (N6) ingress: the flow is identified by its session TEID and the
/// payload is GTP-encapsulated toward the RAN peer on a forward rule.
pub fn xdp_ingress_downlink(
    session_map: &BpfMap,
    gnb_peer: &NodeId,
    flow_teid: u32,
    payload: &[u8],
) -> XdpVerdict {
    if payload.is_empty() {
        return XdpVerdict::Drop;
    }
    match lookup_action(session_map, flow_teid) {
        Some(SessionAction::Forward { .. }) => XdpVerdict::Redirect {
            peer: gnb_peer.clone(),
            payload: gtp::encode_gtp_frame(flow_teid, payload),
        },
        Some(SessionAction::Drop) | None => XdpVerdict::Drop,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ebpf::map::{KeyType, MapDef, ValueType};
    use crate::upf::gtp::encode_gtp_frame;
    use crate::upf::session::{install_into_map, PfcpSession};

    fn map_with(sessions: &[(u32, SessionAction)]) -> BpfMap {
        let mut map = BpfMap::new(MapDef {
            id: "sessions".into(),
            key: KeyType::U32,
            value: ValueType::Bytes,
            capacity: 1 << 14,
        });
        for (i, (teid, action)) in sessions.iter().enumerate() {
            install_into_map(
                &mut map,
                &PfcpSession {
                    seid: i as u64 + 1,
                    teid: *teid,
                    action: action.clone(),
                },
            )
            .unwrap();
        }
        map
    }

    #[test]
    fn hit_forward_redirects_decapsulated() {
        let map = map_with(&[(100, SessionAction::Forward { peer: "dn1".into() })]);
        let frame = encode_gtp_frame(100, b"payload-bytes");
        assert_eq!(
            xdp_ingress_uplink(&map, &frame),
            XdpVerdict::Redirect {
                peer: "dn1".into(),
                payload: b"payload-bytes".to_vec(),
            }
        );
    }

    #[test]
    fn miss_and_drop_rule_both_drop() {
        let map = map_with(&[(100, SessionAction::Drop)]);
        assert_eq!(
            xdp_ingress_uplink(&map, &encode_gtp_frame(100, b"x")),
            XdpVerdict::Drop
        );
        assert_eq!(
            xdp_ingress_uplink(&map, &encode_gtp_frame(999, b"x")),
            XdpVerdict::Drop
        );
    }

    #[test]
    fn zero_sessions_drop_everything_gtp() {
        let map = map_with(&[]);
        assert_eq!(
            xdp_ingress_uplink(&map, &encode_gtp_frame(1, b"x")),
            XdpVerdict::Drop
        );
    }

    #[test]
    fn downlink_encapsulates_toward_gnb() {
        let map = map_with(&[(42, SessionAction::Forward { peer: "dn1".into() })]);
        let gnb = NodeId::from("gnb");
        match xdp_ingress_downlink(&map, &gnb, 42, b"dl-data") {
            XdpVerdict::Redirect { peer, payload } => {
                assert_eq!(peer, gnb);
                assert_eq!(payload, encode_gtp_frame(42, b"dl-data"));
            }
            other => panic!("unexpected verdict {other:?}"),
        }
        assert_eq!(
            xdp_ingress_downlink(&map, &gnb, 7, b"dl-data"),
            XdpVerdict::Drop
        );
    }
}
