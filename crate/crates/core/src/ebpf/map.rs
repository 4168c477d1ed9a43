//! BPF maps: bounded keyed stores shared across hook invocations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyType {
    U32,
    U64,
    Bytes16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    U64,
    Bytes,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum MapKey {
    U32(u32),
    U64(u64),
    B16([u8; 16]),
}

impl MapKey {
    pub fn type_of(&self) -> KeyType {
        match self {
            MapKey::U32(_) => KeyType::U32,
            MapKey::U64(_) => KeyType::U64,
            MapKey::B16(_) => KeyType::Bytes16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapValue {
    U64(u64),
    Bytes(Vec<u8>),
}

impl MapValue {
    pub fn type_of(&self) -> ValueType {
        match self {
            MapValue::U64(_) => ValueType::U64,
            MapValue::Bytes(_) => ValueType::Bytes,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        match self {
            MapValue::U64(v) => Some(*v),
            MapValue::Bytes(_) => None,
        }
    }
}

pub const DEFAULT_MAP_CAPACITY: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapDef {
    pub id: String,
    #[serde(default = "default_key_type")]
    pub key: KeyType,
    #[serde(default = "default_value_type")]
    pub value: ValueType,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
}

fn default_key_type() -> KeyType {
    KeyType::U32
}
fn default_value_type() -> ValueType {
    ValueType::U64
}
fn default_capacity() -> usize {
    DEFAULT_MAP_CAPACITY
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MapError {
    #[error("map {0} is full")]
    Full(String),
    #[error("key not found in map {0}")]
    Miss(String),
    #[error("key type mismatch for map {0}")]
    KeyType(String),
    #[error("value type mismatch for map {0}")]
    ValueType(String),
}

/// Keyed store with a hard capacity: updates with a new key fail on a full
/// map instead of evicting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpfMap {
    def: MapDef,
    entries: BTreeMap<MapKey, MapValue>,
}

impl BpfMap {
    pub fn new(def: MapDef) -> Self {
        BpfMap {
            def,
            entries: BTreeMap::new(),
        }
    }

    pub fn def(&self) -> &MapDef {
        &self.def
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn update(&mut self, key: MapKey, value: MapValue) -> Result<(), MapError> {
        if key.type_of() != self.def.key {
            return Err(MapError::KeyType(self.def.id.clone()));
        }
        if value.type_of() != self.def.value {
            return Err(MapError::ValueType(self.def.id.clone()));
        }
        if !self.entries.contains_key(&key) && self.entries.len() >= self.def.capacity {
            return Err(MapError::Full(self.def.id.clone()));
        }
        self.entries.insert(key, value);
        Ok(())
    }

    pub fn lookup(&self, key: &MapKey) -> Result<&MapValue, MapError> {
        if key.type_of() != self.def.key {
            return Err(MapError::KeyType(self.def.id.clone()));
        }
        self.entries
            .get(key)
            .ok_or_else(|| MapError::Miss(self.def.id.clone()))
    }

    pub fn contains(&self, key: &MapKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn delete(&mut self, key: &MapKey) -> Result<(), MapError> {
        if key.type_of() != self.def.key {
            return Err(MapError::KeyType(self.def.id.clone()));
        }
        self.entries
            .remove(key)
            .map(|_| ())
            .ok_or_else(|| MapError::Miss(self.def.id.clone()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MapKey, &MapValue)> {
        self.entries.iter()
    }
}
