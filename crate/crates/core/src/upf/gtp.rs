//! GTP-U framing for the simulated N3 link.
//!
//! A frame is `[dst_port u16 BE]` followed, for port 2152, by the 8-byte
//! minimal mandatory GTP-U header `{version/flags, message type, length,
//! TEID}` and the inner payload. Frames addressed to any other port are not
//! user-plane traffic and pass up the stack untouched.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GTPU_PORT: u16 = 2152;
pub const GTP_HEADER_LEN: usize = 8;
/// Version 1, protocol type GTP, no optional fields.
pub const GTP_FLAGS: u8 = 0x30;
/// G-PDU message type.
pub const GTP_MSG_GPDU: u8 = 0xff;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

/// Network slice tag. Ground-truth label carried beside packets for
/// verification; the pipeline itself never reads it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SliceId(pub u8);

impl fmt::Display for SliceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "slice-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Uplink,
    Downlink,
}

/// In-model GTP-U packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GtpPacket {
    pub outer_src: NodeId,
    pub outer_dst: NodeId,
    pub teid: u32,
    pub inner_payload: Vec<u8>,
    pub direction: Direction,
    pub slice: SliceId,
}

impl GtpPacket {
    /// Encode to the N3 frame format.
    pub fn encode(&self) -> Vec<u8> {
        encode_gtp_frame(self.teid, &self.inner_payload)
    }
}

pub fn encode_gtp_frame(teid: u32, payload: &[u8]) -> Vec<u8> {
    let mut frame = Vec::with_capacity(2 + GTP_HEADER_LEN + payload.len());
    frame.extend_from_slice(&GTPU_PORT.to_be_bytes());
    frame.push(GTP_FLAGS);
    frame.push(GTP_MSG_GPDU);
    frame.extend_from_slice(&(payload.len() as u16).to_be_bytes());
    frame.extend_from_slice(&teid.to_be_bytes());
    frame.extend_from_slice(payload);
    frame
}

/// A frame destined to a non-GTP port; carried opaque.
pub fn encode_non_gtp_frame(port: u16, payload: &[u8]) -> Vec<u8> {
    debug_assert_ne!(port, GTPU_PORT);
    let mut frame = Vec::with_capacity(2 + payload.len());
    frame.extend_from_slice(&port.to_be_bytes());
    frame.extend_from_slice(payload);
    frame
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GtpError {
    #[error("frame shorter than the mandatory header")]
    Truncated,
    #[error("unsupported version/flags byte")]
    BadFlags,
    #[error("not a G-PDU message")]
    BadMessageType,
    #[error("length field does not match the payload")]
    LengthMismatch,
    #[error("TEID zero is not a valid session")]
    ZeroTeid,
    #[error("empty inner payload")]
    EmptyPayload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedGtp<'a> {
    pub teid: u32,
    pub payload: &'a [u8],
}

/// Frame classification at the driver hook.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameKind<'a> {
    /// Not user-plane traffic; the stack handles it.
    NonGtp,
    Gtp(Result<ParsedGtp<'a>, GtpError>),
}

pub fn classify_frame(frame: &[u8]) -> FrameKind<'_> {
    if frame.len() < 2 {
        return FrameKind::NonGtp;
    }
    let port = u16::from_be_bytes([frame[0], frame[1]]);
    if port != GTPU_PORT {
        return FrameKind::NonGtp;
    }
    FrameKind::Gtp(parse_gtp(&frame[2..]))
}

pub fn parse_gtp(bytes: &[u8]) -> Result<ParsedGtp<'_>, GtpError> {
    if bytes.len() < GTP_HEADER_LEN {
        return Err(GtpError::Truncated);
    }
    if bytes[0] != GTP_FLAGS {
        return Err(GtpError::BadFlags);
    }
    if bytes[1] != GTP_MSG_GPDU {
        return Err(GtpError::BadMessageType);
    }
    let length = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
    let payload = &bytes[GTP_HEADER_LEN..];
    if length != payload.len() {
        return Err(GtpError::LengthMismatch);
    }
    let teid = u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if teid == 0 {
        return Err(GtpError::ZeroTeid);
    }
    if payload.is_empty() {
        return Err(GtpError::EmptyPayload);
    }
    Ok(ParsedGtp { teid, payload })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_parse_round_trip() {
        let frame = encode_gtp_frame(100, b"user-data");
        match classify_frame(&frame) {
            FrameKind::Gtp(Ok(parsed)) => {
                assert_eq!(parsed.teid, 100);
                assert_eq!(parsed.payload, b"user-data");
            }
            other => panic!("unexpected classification: {other:?}"),
        }
    }

    #[test]
    fn truncated_header_is_malformed() {
        let frame = encode_gtp_frame(100, b"x");
        for cut in 2..10 {
            let short = &frame[..cut];
            match classify_frame(short) {
                FrameKind::Gtp(Err(_)) => {}
                other => panic!("truncated frame at {cut} classified as {other:?}"),
            }
        }
    }

    #[test]
    fn bad_fields_rejected() {
        let mut frame = encode_gtp_frame(7, b"abc");
        frame[2] = 0x20; // wrong flags
        assert!(matches!(
            classify_frame(&frame),
            FrameKind::Gtp(Err(GtpError::BadFlags))
        ));

        let mut frame = encode_gtp_frame(7, b"abc");
        frame[3] = 0x01; // echo request, not G-PDU
        assert!(matches!(
            classify_frame(&frame),
            FrameKind::Gtp(Err(GtpError::BadMessageType))
        ));

        let mut frame = encode_gtp_frame(7, b"abc");
        frame[5] = 9; // corrupt length
        assert!(matches!(
            classify_frame(&frame),
            FrameKind::Gtp(Err(GtpError::LengthMismatch))
        ));

        let frame = encode_gtp_frame(0, b"abc");
        assert!(matches!(
            classify_frame(&frame),
            FrameKind::Gtp(Err(GtpError::ZeroTeid))
        ));
    }

    #[test]
    fn non_gtp_port_passes_through() {
        let frame = encode_non_gtp_frame(8805, b"pfcp-ish");
        assert_eq!(classify_frame(&frame), FrameKind::NonGtp);
        assert_eq!(classify_frame(&[0x01]), FrameKind::NonGtp);
    }
}
