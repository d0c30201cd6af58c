use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    /// Trainable parameter.
    Param,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateEntry {
    pub name: String,
    pub kind: EntryKind,
    /// Batch-norm affine parameter or running statistic.
    pub batch_norm: bool,
    pub tensor: Tensor,
}

/// Ordered name → tensor registry of a model's parameters followed by its
/// buffers. This is the unit clients exchange with the server.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateDict {
    pub entries: Vec<StateEntry>,
}

impl StateDict {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == EntryKind::Param)
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Errors unless both dicts have the same names, kinds and shapes in the
    /// same order.
    pub fn check_same_registry(&self, other: &StateDict) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Aggregation(format!(
                "registry sizes differ: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.kind != b.kind || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Aggregation(format!(
                    "registry mismatch at `{}` {:?} vs `{}` {:?}",
                    a.name,
                    a.tensor.shape(),
                    b.name,
                    b.tensor.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn bits_eq(&self, other: &StateDict) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.tensor.bits_eq(&b.tensor))
    }

    pub fn max_abs_diff(&self, other: &StateDict) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.tensor.max_abs_diff(&b.tensor))
            .fold(0.0, f64::max)
    }
}
