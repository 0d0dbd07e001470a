//! Named parameter collections. Iteration order is lexicographic so every
//! consumer (optimizer, serializer, gradient checks) sees the same sequence.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SCHEMA_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar> {
    entries: BTreeMap<String, Tensor<T>>,
    pub schema_version: u8,
}

impl<T: Scalar> Default for ModelParams<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
            schema_version: SCHEMA_VERSION,
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) {
        self.entries.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| CoreError::MissingWeight(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| CoreError::MissingWeight(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lexicographic iteration, the crate-wide canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(|k| k.as_str()).collect()
    }

    /// Total element count across all entries.
    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    /// Merge another collection under a name prefix.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ModelParams<T>) {
        for (name, t) in other.iter() {
            self.insert(&alloc::format!("{prefix}.{name}"), t.clone());
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::new();
        out.schema_version = self.schema_version;
        for (name, t) in self.iter() {
            out.insert(name, t.cast());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_is_lexicographic() {
        let mut p = ModelParams::<f32>::new();
        p.insert("z", Tensor::zeros(&[1]));
        p.insert("a", Tensor::zeros(&[1]));
        p.insert("m", Tensor::zeros(&[1]));
        assert_eq!(p.names(), ["a", "m", "z"]);
    }

    #[test]
    fn missing_entry_is_distinct_error() {
        let p = ModelParams::<f32>::new();
        assert!(matches!(p.get("w"), Err(CoreError::MissingWeight(_))));
    }
}
