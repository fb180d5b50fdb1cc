//! Flat storage for every trainable scalar with a named index map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A contiguous range inside a [`ParamVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// One named tensor in the index map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector<T> {
    entries: Vec<ParamEntry>,
    values: Vec<T>,
}

impl<T> Default for ParamVector<T> {
    fn default() -> Self {
        ParamVector {
            entries: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<T: Real> ParamVector<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor, filling it from `init`.
    pub fn alloc(&mut self, name: impl Into<String>, shape: &[usize], mut init: impl FnMut() -> T) -> Slot {
        let offset = self.values.len();
        let len: usize = shape.iter().product();
        self.values.extend((0..len).map(|_| init()));
        self.entries.push(ParamEntry {
            name: name.into(),
            offset,
            shape: shape.to_vec(),
        });
        Slot { offset, len }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn slice(&self, slot: Slot) -> &[T] {
        &self.values[slot.range()]
    }

    pub fn slice_mut(&mut self, slot: Slot) -> &mut [T] {
        &mut self.values[slot.range()]
    }

    pub fn flatten(&self) -> Vec<T> {
        self.values.clone()
    }

    /// Overwrites every value; the length must match the index map.
    pub fn unflatten(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.values.len() {
            return Err(Error::dims("parameter vector", self.values.len(), flat.len()));
        }
        self.values.copy_from_slice(flat);
        Ok(())
    }

    /// Human-readable name of one scalar, e.g. `source0.enn.prototypes[3,7]`.
    pub fn name_of(&self, index: usize) -> String {
        let pos = self.entries.partition_point(|e| e.offset <= index);
        let Some(entry) = pos.checked_sub(1).map(|p| &self.entries[p]) else {
            return format!("#{index}");
        };
        let mut rem = index - entry.offset;
        let mut coords = vec![0; entry.shape.len()];
        for (axis, &dim) in entry.shape.iter().enumerate().rev() {
            coords[axis] = rem % dim.max(1);
            rem /= dim.max(1);
        }
        let coords: Vec<String> = coords.iter().map(|c| c.to_string()).collect();
        format!("{}[{}]", entry.name, coords.join(","))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
