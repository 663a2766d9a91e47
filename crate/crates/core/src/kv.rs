//! Ordered string-to-string maps with unique keys.
//!
//! Intent parameters, monitoring attributes and metrics all share the same
//! shape: a flat map whose entry order is part of the value (it must survive
//! a parse/serialize round trip byte for byte). `ParamMap` keeps insertion
//! order, rejects duplicate keys, and enforces the lexical rules that make
//! entries representable in both the text format and the JSON interchange
//! encoding.

use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Ordered map of scalar parameters. Equality is order-sensitive.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamMap {
    entries: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapEntryError {
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("invalid key `{0}`: {1}")]
    InvalidKey(String, &'static str),
    #[error("invalid value for key `{0}`: {1}")]
    InvalidValue(String, &'static str),
}

fn check_key(key: &str) -> Result<(), &'static str> {
    if key.is_empty() {
        return Err("empty");
    }
    if key.chars().any(|c| c.is_whitespace()) {
        return Err("contains whitespace");
    }
    if key.contains(':') {
        return Err("contains `:`");
    }
    if key.starts_with('-') {
        return Err("starts with `-`");
    }
    Ok(())
}

fn check_value(value: &str) -> Result<(), &'static str> {
    if value.is_empty() {
        return Err("empty");
    }
    if value.contains('\n') || value.contains('\r') {
        return Err("contains a line break");
    }
    if value.trim() != value {
        return Err("has leading or trailing whitespace");
    }
    Ok(())
}

impl ParamMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert an entry, rejecting duplicates and unrepresentable scalars.
    pub fn insert(
        &mut self,
        key: impl Into<String>,
        value: impl Into<String>,
    ) -> Result<(), MapEntryError> {
        let key = key.into();
        let value = value.into();
        check_key(&key).map_err(|why| MapEntryError::InvalidKey(key.clone(), why))?;
        check_value(&value).map_err(|why| MapEntryError::InvalidValue(key.clone(), why))?;
        if self.contains_key(&key) {
            return Err(MapEntryError::DuplicateKey(key));
        }
        self.entries.push((key, value));
        Ok(())
    }

    pub fn from_pairs<K, V>(pairs: impl IntoIterator<Item = (K, V)>) -> Result<Self, MapEntryError>
    where
        K: Into<String>,
        V: Into<String>,
    {
        let mut map = Self::new();
        for (k, v) in pairs {
            map.insert(k, v)?;
        }
        Ok(map)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.entries.iter().any(|(k, _)| k == key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Serialize for ParamMap {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.entries.len()))?;
        for (k, v) in &self.entries {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

struct ParamMapVisitor;

impl<'de> Visitor<'de> for ParamMapVisitor {
    type Value = ParamMap;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a flat map of scalar strings")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
        let mut map = ParamMap::new();
        while let Some((key, value)) = access.next_entry::<String, String>()? {
            map.insert(key, value).map_err(serde::de::Error::custom)?;
        }
        Ok(map)
    }
}

impl<'de> Deserialize<'de> for ParamMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_map(ParamMapVisitor)
    }
}
