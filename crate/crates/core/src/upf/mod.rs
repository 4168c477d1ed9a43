//! Simplified 5G user plane: GTP-U framing, PFCP session state, the XDP
//! forwarding pipeline, and the dual-slice reference topology.

pub mod gtp;
pub mod pipeline;
pub mod session;
pub mod topology;

pub use gtp::{Direction, GtpPacket, NodeId, SliceId};
pub use pipeline::{VerdictCounters, XdpVerdict};
pub use session::{PfcpSession, SessionAction, SessionError};
