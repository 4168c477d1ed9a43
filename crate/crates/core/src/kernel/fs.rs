//! Namespaced in-memory filesystem and user-space buffers.
//!
//! Plain syscalls resolve paths only inside the caller's namespace; the only
//! way content crosses a namespace boundary is through an eBPF helper.

use std::collections::BTreeMap;

use super::container::Namespace;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileNode {
    pub path: String,
    pub namespace: Namespace,
    pub contents: Vec<u8>,
    /// Reporting label only; the syscall path never consults it.
    pub sensitive: bool,
}

#[derive(Debug, Default)]
pub struct Filesystem {
    files: BTreeMap<(Namespace, String), FileNode>,
}

impl Filesystem {
    pub fn new() -> Self {
        Filesystem::default()
    }

    /// Insert or replace a file node. (path, namespace) is the unique key.
    pub fn insert(&mut self, node: FileNode) {
        self.files
            .insert((node.namespace, node.path.clone()), node);
    }

    pub fn resolve(&self, ns: Namespace, path: &str) -> Option<&FileNode> {
        self.files.get(&(ns, path.to_string()))
    }

    pub fn resolve_mut(&mut self, ns: Namespace, path: &str) -> Option<&mut FileNode> {
        self.files.get_mut(&(ns, path.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &FileNode> {
        self.files.values()
    }

    /// Byte-exact snapshot for before/after comparisons.
    pub fn snapshot(&self) -> BTreeMap<(Namespace, String), Vec<u8>> {
        self.files
            .iter()
            .map(|(k, v)| (k.clone(), v.contents.clone()))
            .collect()
    }
}

/// Fill state of a user buffer across the syscall lifecycle. The only legal
/// transitions are Empty -> Filled (kernel copy) and Filled -> Overwritten
/// (probe-write helper).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillState {
    Empty,
    Filled,
    Overwritten,
}

impl FillState {
    pub fn name(self) -> &'static str {
        match self {
            FillState::Empty => "empty",
            FillState::Filled => "filled",
            FillState::Overwritten => "overwritten",
        }
    }
}

#[derive(Debug, Clone)]
pub struct UserBuffer {
    pub address: u64,
    pub owner_pid: u32,
    pub capacity: usize,
    pub contents: Vec<u8>,
    pub fill_state: FillState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum BufferError {
    #[error("unknown buffer address")]
    UnknownAddress,
    #[error("buffer not yet filled by the kernel")]
    Empty,
    #[error("payload longer than buffer capacity")]
    PayloadTooLong,
    #[error("buffer not in a writable fill state")]
    BadFillState,
}

#[derive(Debug, Default)]
pub struct BufferTable {
    buffers: BTreeMap<u64, UserBuffer>,
}

impl BufferTable {
    pub fn new() -> Self {
        BufferTable::default()
    }

    pub fn allocate(&mut self, address: u64, owner_pid: u32, capacity: usize) {
        self.buffers.insert(
            address,
            UserBuffer {
                address,
                owner_pid,
                capacity,
                contents: Vec::new(),
                fill_state: FillState::Empty,
            },
        );
    }

    pub fn get(&self, address: u64) -> Option<&UserBuffer> {
        self.buffers.get(&address)
    }

    /// Kernel-side fill: Empty -> Filled with at most `capacity` bytes.
    pub fn kernel_fill(&mut self, address: u64, data: &[u8]) -> Result<usize, BufferError> {
        let buf = self
            .buffers
            .get_mut(&address)
            .ok_or(BufferError::UnknownAddress)?;
        let n = data.len().min(buf.capacity);
        buf.contents = data[..n].to_vec();
        buf.fill_state = FillState::Filled;
        Ok(n)
    }

    /// Probe-write: Filled -> Overwritten, full replacement of the contents.
    pub fn probe_write(&mut self, address: u64, payload: &[u8]) -> Result<FillState, BufferError> {
        let buf = self
            .buffers
            .get_mut(&address)
            .ok_or(BufferError::UnknownAddress)?;
        if payload.len() > buf.capacity {
            return Err(BufferError::PayloadTooLong);
        }
        if buf.fill_state != FillState::Filled {
            return Err(BufferError::BadFillState);
        }
        let prev = buf.fill_state;
        buf.contents = payload.to_vec();
        buf.fill_state = FillState::Overwritten;
        Ok(prev)
    }

    /// Probe-read: first `len` bytes of the contents. Fails on an Empty buffer.
    pub fn probe_read(&self, address: u64, len: usize) -> Result<Vec<u8>, BufferError> {
        let buf = self.buffers.get(&address).ok_or(BufferError::UnknownAddress)?;
        if buf.fill_state == FillState::Empty {
            return Err(BufferError::Empty);
        }
        let n = len.min(buf.contents.len());
        Ok(buf.contents[..n].to_vec())
    }

    pub fn iter(&self) -> impl Iterator<Item = &UserBuffer> {
        self.buffers.values()
    }
}
