//! Named parameter collections.
//!
//! A [`ParamSet`] is a flat map from parameter path (e.g.
//! `layers.0.mixer.a_log`) to a tensor. Names are unique and shapes are
//! fixed at insertion; iteration is always in name order so every consumer
//! (optimizer, checkpointing, finite differences) sees a deterministic
//! sequence.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a fresh parameter; duplicate names are rejected.
    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::config(alloc::format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::config(alloc::format!("unknown parameter `{name}`")))
    }

    /// Mutable access to the values of an existing parameter. The shape
    /// cannot change through this path.
    pub fn values_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        self.entries
            .get_mut(name)
            .map(|t| t.data_mut())
            .ok_or_else(|| Error::config(alloc::format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Name-ordered iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar elements across all parameters.
    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    /// A same-shaped set with every value zero (gradient accumulator).
    pub fn zeros_like(&self) -> ParamSet {
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect();
        ParamSet { entries }
    }

    /// Names of parameters holding non-finite values.
    pub fn non_finite_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, t)| t.has_non_finite())
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// True when both sets have identical names, shapes, and bit-identical
    /// values.
    pub fn bit_identical(&self, other: &ParamSet) -> bool {
        if self.entries.len() != other.entries.len() {
            return false;
        }
        self.iter().zip(other.iter()).all(|((na, ta), (nb, tb))| {
            na == nb
                && ta.shape() == tb.shape()
                && ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }
}

/// Loss value plus one gradient tensor per parameter, shape-matched.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub loss: f64,
    pub grads: ParamSet,
}

impl GradReport {
    /// Validates the shape contract against the parameter set.
    pub fn new(loss: f64, grads: ParamSet, params: &ParamSet) -> Result<Self> {
        if grads.len() != params.len() {
            return Err(Error::internal("gradient report must cover every parameter"));
        }
        for ((gn, gt), (pn, pt)) in grads.iter().zip(params.iter()) {
            if gn != pn || gt.shape() != pt.shape() {
                return Err(Error::internal(alloc::format!(
                    "gradient `{gn}` does not match parameter `{pn}`"
                )));
            }
        }
        Ok(GradReport { loss, grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(p.insert("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn iteration_is_name_ordered() {
        let mut p = ParamSet::new();
        p.insert("b.x", Tensor::zeros(&[1])).unwrap();
        p.insert("a.y", Tensor::zeros(&[1])).unwrap();
        let names: alloc::vec::Vec<&str> = p.names().collect();
        assert_eq!(names, ["a.y", "b.x"]);
        assert_eq!(p.total_elements(), 2);
    }
}
