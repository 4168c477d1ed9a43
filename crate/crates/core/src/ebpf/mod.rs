//! The modeled eBPF runtime: declarative programs, hook attachment, BPF
//! maps, helper semantics, and the load-time verification gate.

pub mod hook;
pub mod map;
pub mod program;
pub mod runtime;
pub mod verifier;

pub use hook::{HookPoint, Phase, Syscall};
pub use map::{BpfMap, KeyType, MapDef, MapError, MapKey, MapValue};
pub use program::{
    BufTarget, Cond, EbpfProgram, EmitField, EventContext, HelperCall, HelperName, KeyBind,
    LenBind, ProgramBody, RecordKind, Rule, RuleOutcome, ValueBind,
};
pub use runtime::{AttachError, ExfilRecord, HelperError, OverrideSlot, ProgId, Runtime};
pub use verifier::{LoadError, MalformedReason};
