//! Containers: namespaced groups of processes with a fixed capability set.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Privilege bits gating eBPF load/attach and network administration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Capability {
    #[serde(rename = "NET_ADMIN")]
    NetAdmin,
    #[serde(rename = "SYS_ADMIN")]
    SysAdmin,
    #[serde(rename = "BPF")]
    Bpf,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::NetAdmin => "NET_ADMIN",
            Capability::SysAdmin => "SYS_ADMIN",
            Capability::Bpf => "BPF",
        })
    }
}

pub type CapSet = BTreeSet<Capability>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContainerId(pub String);

impl ContainerId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ContainerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ContainerId {
    fn from(s: &str) -> Self {
        ContainerId(s.to_string())
    }
}

/// Mount namespace label. `Host` is the shared host namespace; each container
/// gets a unique numbered one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Namespace {
    Host,
    Container(u32),
}

impl fmt::Display for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Namespace::Host => f.write_str("host"),
            Namespace::Container(n) => write!(f, "ns{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerSpec {
    pub id: ContainerId,
    pub capabilities: CapSet,
    pub bpffs_mounted: bool,
    /// Orchestrator restarts this container's workload when all of its
    /// processes are dead.
    pub managed: bool,
}

impl ContainerSpec {
    pub fn new(id: &str) -> Self {
        ContainerSpec {
            id: id.into(),
            capabilities: CapSet::new(),
            bpffs_mounted: false,
            managed: false,
        }
    }

    pub fn with_caps(mut self, caps: &[Capability]) -> Self {
        self.capabilities = caps.iter().copied().collect();
        self
    }

    pub fn bpffs(mut self, mounted: bool) -> Self {
        self.bpffs_mounted = mounted;
        self
    }

    pub fn managed(mut self, managed: bool) -> Self {
        self.managed = managed;
        self
    }
}

/// A registered container. Capabilities are fixed at creation.
#[derive(Debug, Clone)]
pub struct Container {
    id: ContainerId,
    namespace: Namespace,
    capabilities: CapSet,
    bpffs_mounted: bool,
    managed: bool,
}

impl Container {
    /// Low-level constructor; [`Host::create_container`] is the normal path
    /// and allocates the namespace itself.
    ///
    /// [`Host::create_container`]: crate::kernel::host::Host::create_container
    pub fn from_spec(spec: &ContainerSpec, namespace: Namespace) -> Self {
        Container {
            id: spec.id.clone(),
            namespace,
            capabilities: spec.capabilities.clone(),
            bpffs_mounted: spec.bpffs_mounted,
            managed: spec.managed,
        }
    }

    pub fn id(&self) -> &ContainerId {
        &self.id
    }

    pub fn namespace(&self) -> Namespace {
        self.namespace
    }

    pub fn capabilities(&self) -> &CapSet {
        &self.capabilities
    }

    pub fn has_cap(&self, cap: Capability) -> bool {
        self.capabilities.contains(&cap)
    }

    pub fn bpffs_mounted(&self) -> bool {
        self.bpffs_mounted
    }

    pub fn managed(&self) -> bool {
        self.managed
    }
}

pub fn caps_to_string(caps: &CapSet) -> String {
    if caps.is_empty() {
        return "-".to_string();
    }
    caps.iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
