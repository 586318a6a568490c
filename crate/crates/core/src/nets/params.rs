//! Named, ordered weight collections. A `ParameterSet` is the unit that
//! moves between clients and the aggregation server, so its entry order is
//! canonical and its layout is fingerprinted for compatibility checks.

use super::NetError;
use crate::tensor::Tensor;

/// Ordered list of named weight tensors.
///
/// Entry order is canonical (layer-major, then direction, then
/// weight/bias, with the fully-connected head last). Two sets can be
/// aggregated or used interchangeably iff their `layout_id` matches.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
    layout_id: u64,
}

impl ParameterSet {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<Self, NetError> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(other, _)| other == name) {
                return Err(NetError::DuplicateParameter(name.clone()));
            }
        }
        let layout_id = layout_hash(&entries);
        Ok(ParameterSet { entries, layout_id })
    }

    /// Hash of (names, shapes); value equality means the sets are
    /// structurally compatible.
    pub fn layout_id(&self) -> u64 {
        self.layout_id
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.entries[idx].1
    }

    /// Mutable access to the values of one entry; the shape stays fixed so
    /// the layout id remains valid.
    pub fn values_mut(&mut self, idx: usize) -> &mut [f64] {
        self.entries[idx].1.data_mut()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Same names and shapes, all values zero.
    pub fn zeros_like(&self) -> ParameterSet {
        let entries = self
            .entries
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
            .collect();
        ParameterSet {
            entries,
            layout_id: self.layout_id,
        }
    }

    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.layout_id == other.layout_id
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn layout_hash(entries: &[(String, Tensor)]) -> u64 {
    let mut h = FNV_OFFSET;
    let mut eat = |byte: u8| {
        h ^= byte as u64;
        h = h.wrapping_mul(FNV_PRIME);
    };
    for (name, tensor) in entries {
        for b in name.as_bytes() {
            eat(*b);
        }
        eat(0xFF);
        eat(tensor.shape().len() as u8);
        for &dim in tensor.shape() {
            for b in (dim as u64).to_le_bytes() {
                eat(b);
            }
        }
    }
    h
}
