//! Load-time mitigation policies: capability stripping and per-container
//! hook restriction plus helper allow-listing.
//!
//! Enforcement happens entirely at load, verifier-style: programs declare
//! their helpers statically, so a denied program never contributes a single
//! effect to a run.

pub mod matrix;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ebpf::hook::HookPoint;
use crate::ebpf::program::{EbpfProgram, HelperName};
use crate::kernel::container::{CapSet, Capability, Container, ContainerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyMode {
    /// Everything the capability gate allows.
    Permissive,
    /// Remove SYS_ADMIN and BPF from the listed containers.
    CapabilityStrip,
    /// Keep capabilities; constrain hooks and helpers per container.
    FineGrained,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerPolicy {
    #[serde(default)]
    pub allowed_hooks: BTreeSet<String>,
    #[serde(default)]
    pub allowed_helpers: BTreeSet<HelperName>,
    #[serde(default)]
    pub caps_override: Option<CapSet>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub name: String,
    pub mode: PolicyMode,
    pub per_container: BTreeMap<ContainerId, ContainerPolicy>,
}

/// Reason a load was denied, in deterministic order: capabilities first,
/// then the hook, then the first disallowed helper in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DenyReason {
    CapabilityDenied,
    HookDenied(String),
    HelperDenied(HelperName),
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenyReason::CapabilityDenied => f.write_str("CapabilityDenied"),
            DenyReason::HookDenied(h) => write!(f, "HookDenied:{h}"),
            DenyReason::HelperDenied(h) => write!(f, "HelperDenied:{h}"),
        }
    }
}

impl Policy {
    pub fn permissive() -> Self {
        Policy {
            name: "permissive".into(),
            mode: PolicyMode::Permissive,
            per_container: BTreeMap::new(),
        }
    }

    /// Strip SYS_ADMIN/BPF from the given containers.
    pub fn capability_strip(name: &str, containers: &[ContainerId]) -> Self {
        let per_container = containers
            .iter()
            .map(|id| (id.clone(), ContainerPolicy::default()))
            .collect();
        Policy {
            name: name.into(),
            mode: PolicyMode::CapabilityStrip,
            per_container,
        }
    }

    /// The shipped fine-grained reference policy: the listed containers may
    /// attach the XDP hook and use map and output helpers, nothing else.
    pub fn fine_grained_reference(name: &str, containers: &[ContainerId]) -> Self {
        let allowed_helpers: BTreeSet<HelperName> = [
            HelperName::MapUpdate,
            HelperName::MapLookup,
            HelperName::MapDelete,
            HelperName::EmitRecord,
        ]
        .into_iter()
        .collect();
        let per_container = containers
            .iter()
            .map(|id| {
                (
                    id.clone(),
                    ContainerPolicy {
                        allowed_hooks: ["xdp".to_string()].into_iter().collect(),
                        allowed_helpers: allowed_helpers.clone(),
                        caps_override: None,
                    },
                )
            })
            .collect();
        Policy {
            name: name.into(),
            mode: PolicyMode::FineGrained,
            per_container,
        }
    }

    /// Capabilities effective for a container under this policy.
    pub fn effective_caps(&self, container: &Container) -> CapSet {
        match (self.mode, self.per_container.get(container.id())) {
            (PolicyMode::CapabilityStrip, Some(_)) => {
                let mut caps = container.capabilities().clone();
                caps.remove(&Capability::SysAdmin);
                caps.remove(&Capability::Bpf);
                caps
            }
            (_, Some(ContainerPolicy { caps_override: Some(caps), .. })) => caps.clone(),
            _ => container.capabilities().clone(),
        }
    }

    /// The load gate. Deny order is fixed: caps, then hook, then helpers in
    /// canonical order, so every matrix cell reproduces bit for bit.
    pub fn check_load(&self, owner: &Container, prog: &EbpfProgram) -> Result<(), DenyReason> {
        let caps = self.effective_caps(owner);
        if !caps.contains(&Capability::SysAdmin) && !caps.contains(&Capability::Bpf) {
            return Err(DenyReason::CapabilityDenied);
        }
        if self.mode == PolicyMode::FineGrained {
            let cp = self.per_container.get(owner.id());
            let hook_name = prog.hook.canonical_name();
            let hook_allowed = cp
                .map(|cp| {
                    cp.allowed_hooks.contains(&hook_name)
                        || cp.allowed_hooks.contains(&wildcard_hook(&prog.hook))
                })
                .unwrap_or(false);
            if !hook_allowed {
                return Err(DenyReason::HookDenied(hook_name));
            }
            let allowed = cp.map(|cp| &cp.allowed_helpers);
            for helper in prog.computed_helpers() {
                if !allowed.map(|a| a.contains(&helper)).unwrap_or(false) {
                    return Err(DenyReason::HelperDenied(helper));
                }
            }
        }
        Ok(())
    }

    /// XDP attachment additionally needs NET_ADMIN on the interface owner.
    pub fn check_xdp_attach(&self, owner: &Container) -> Result<(), DenyReason> {
        if self.effective_caps(owner).contains(&Capability::NetAdmin) {
            Ok(())
        } else {
            Err(DenyReason::CapabilityDenied)
        }
    }

    /// Render the helper allow-list for log meta records: "*" when the mode
    /// does not constrain helpers.
    pub fn helpers_meta(&self, container: &ContainerId) -> String {
        match self.mode {
            PolicyMode::FineGrained => {
                let Some(cp) = self.per_container.get(container) else {
                    return "-".to_string();
                };
                if cp.allowed_helpers.is_empty() {
                    "-".to_string()
                } else {
                    cp.allowed_helpers
                        .iter()
                        .map(|h| h.canonical().to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                }
            }
            _ => "*".to_string(),
        }
    }

    pub fn hooks_meta(&self, container: &ContainerId) -> String {
        match self.mode {
            PolicyMode::FineGrained => {
                let Some(cp) = self.per_container.get(container) else {
                    return "-".to_string();
                };
                if cp.allowed_hooks.is_empty() {
                    "-".to_string()
                } else {
                    cp.allowed_hooks.iter().cloned().collect::<Vec<_>>().join(",")
                }
            }
            _ => "*".to_string(),
        }
    }
}

/// Family wildcard an allow-list may use instead of a fully qualified name,
/// e.g. "kprobe/*".
fn wildcard_hook(hook: &HookPoint) -> String {
    match hook {
        HookPoint::RawTracepointSysEnter => "raw_tracepoint/*".to_string(),
        HookPoint::TracepointSysExit(_) => "tracepoint/*".to_string(),
        HookPoint::Kprobe(_) => "kprobe/*".to_string(),
        HookPoint::Kretprobe(_) => "kretprobe/*".to_string(),
        HookPoint::Xdp => "xdp".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ebpf::program::ProgramBody;
    use crate::kernel::container::{ContainerSpec, Namespace};

    fn upf_container() -> Container {
        Container::from_spec(
            &ContainerSpec::new("eupf1")
                .with_caps(&[Capability::NetAdmin, Capability::SysAdmin])
                .bpffs(true),
            Namespace::Container(1),
        )
    }

    fn unprivileged_container() -> Container {
        Container::from_spec(&ContainerSpec::new("amf"), Namespace::Container(2))
    }

    fn prog(owner: &str, hook: HookPoint, helpers: &[crate::ebpf::program::HelperCall]) -> EbpfProgram {
        EbpfProgram {
            id: "p".into(),
            owner: owner.into(),
            hook,
            body: ProgramBody::Rules(vec![crate::ebpf::program::Rule::new(
                vec![],
                helpers.to_vec(),
            )]),
            declared_helpers: BTreeSet::new(),
            maps: vec![],
        }
    }

    #[test]
    fn permissive_allows_capable_owner() {
        let p = Policy::permissive();
        let program = prog(
            "eupf1",
            HookPoint::RawTracepointSysEnter,
            &[crate::ebpf::program::HelperCall::GetCurrentComm],
        );
        assert_eq!(p.check_load(&upf_container(), &program), Ok(()));
    }

    #[test]
    fn no_caps_denied_even_under_permissive() {
        let p = Policy::permissive();
        let program = prog("amf", HookPoint::RawTracepointSysEnter, &[]);
        assert_eq!(
            p.check_load(&unprivileged_container(), &program),
            Err(DenyReason::CapabilityDenied)
        );
    }

    #[test]
    fn bpf_capability_alone_suffices_net_admin_does_not() {
        let p = Policy::permissive();
        let with_bpf = Container::from_spec(
            &ContainerSpec::new("c1").with_caps(&[Capability::Bpf]),
            Namespace::Container(3),
        );
        let with_net = Container::from_spec(
            &ContainerSpec::new("c2").with_caps(&[Capability::NetAdmin]),
            Namespace::Container(4),
        );
        let program = prog("c1", HookPoint::RawTracepointSysEnter, &[]);
        assert_eq!(p.check_load(&with_bpf, &program), Ok(()));
        assert_eq!(
            p.check_load(&with_net, &program),
            Err(DenyReason::CapabilityDenied)
        );
    }

    #[test]
    fn capability_strip_blocks_load_but_keeps_net_admin() {
        let p = Policy::capability_strip("strip", &["eupf1".into()]);
        let c = upf_container();
        let program = prog("eupf1", HookPoint::Xdp, &[]);
        assert_eq!(
            p.check_load(&c, &program),
            Err(DenyReason::CapabilityDenied)
        );
        // NET_ADMIN survives the strip; attach alone would have been fine.
        assert_eq!(p.check_xdp_attach(&c), Ok(()));
    }

    #[test]
    fn fine_grained_denies_hook_before_helpers() {
        let p = Policy::fine_grained_reference("fg", &["eupf1".into()]);
        let program = prog(
            "eupf1",
            HookPoint::Kprobe(crate::ebpf::hook::Syscall::Read),
            &[crate::ebpf::program::HelperCall::SendSignal { signo: 9 }],
        );
        assert_eq!(
            p.check_load(&upf_container(), &program),
            Err(DenyReason::HookDenied("kprobe/__x64_sys_read".into()))
        );
    }

    #[test]
    fn fine_grained_names_first_denied_helper_canonically() {
        // Allow the syscall hooks but only the XDP-ish helper set: the first
        // denied helper in canonical order is probe_write_user, not
        // override_return.
        let mut p = Policy::fine_grained_reference("fg", &["eupf1".into()]);
        let cp = p.per_container.get_mut(&ContainerId::from("eupf1")).unwrap();
        cp.allowed_hooks.insert("kretprobe/*".into());
        let program = prog(
            "eupf1",
            HookPoint::Kretprobe(crate::ebpf::hook::Syscall::Read),
            &[
                crate::ebpf::program::HelperCall::OverrideReturn { value: 5 },
                crate::ebpf::program::HelperCall::ProbeWriteUser {
                    target: crate::ebpf::program::BufTarget::Ctx,
                    payload: b"x".to_vec(),
                },
            ],
        );
        assert_eq!(
            p.check_load(&upf_container(), &program),
            Err(DenyReason::HelperDenied(HelperName::ProbeWriteUser))
        );
    }

    #[test]
    fn fine_grained_allows_xdp_forwarder() {
        let p = Policy::fine_grained_reference("fg", &["eupf1".into()]);
        let program = EbpfProgram {
            id: "xdp-upf".into(),
            owner: "eupf1".into(),
            hook: HookPoint::Xdp,
            body: ProgramBody::XdpForwarder {
                session_map: "sessions".into(),
            },
            declared_helpers: BTreeSet::new(),
            maps: vec![],
        };
        assert_eq!(p.check_load(&upf_container(), &program), Ok(()));
    }
}
