use serde::{Deserialize, Serialize};

use crate::error::{MppError, Result};

/// Ordered, append-only list of every field name known to a dataset or model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldRegistry(Vec<String>);

impl FieldRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut reg = Self::new();
        reg.register(names)?;
        Ok(reg)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    /// Appends new names; fails without modifying the registry if any name
    /// is already present or repeated.
    pub fn register<S: AsRef<str>>(&mut self, names: &[S]) -> Result<()> {
        for (i, name) in names.iter().enumerate() {
            let name = name.as_ref();
            if self.contains(name) || names[..i].iter().any(|n| n.as_ref() == name) {
                return Err(MppError::DuplicateField(name.to_string()));
            }
        }
        self.0.extend(names.iter().map(|n| n.as_ref().to_string()));
        Ok(())
    }

    /// Registers whichever of `names` are missing, returning how many were added.
    pub fn register_missing<S: AsRef<str>>(&mut self, names: &[S]) -> usize {
        let before = self.len();
        for n in names {
            if !self.contains(n.as_ref()) {
                self.0.push(n.as_ref().to_string());
            }
        }
        self.len() - before
    }

    pub fn indices_of<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.index_of(n.as_ref()).ok_or_else(|| MppError::Unknown {
                    kind: "field",
                    name: n.as_ref().to_string(),
                })
            })
            .collect()
    }

    /// True if `self` is `other` or a prefix of it.
    pub fn is_prefix_of(&self, other: &FieldRegistry) -> bool {
        self.0.len() <= other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a == b)
    }
}
