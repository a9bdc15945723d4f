use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// One named tensor belonging to an architectural layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub layer: usize,
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered, layer-grouped collection of parameter tensors.
///
/// Layer indices run contiguously from 1 (input side) to `layer_count()`
/// (output side) and entries are sorted by layer. Two sets are congruent
/// when their `(layer, name, shape)` sequences are identical; every
/// aggregation over sets requires congruence.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    layers: usize,
}

impl ParamSet {
    pub fn new(entries: Vec<ParamEntry>) -> Result<Self> {
        let mut prev = 0usize;
        for e in &entries {
            if e.layer != prev && e.layer != prev + 1 {
                return Err(TensorError::Contract(format!(
                    "layer indices must be contiguous from 1: `{}` has layer {} after {}",
                    e.name, e.layer, prev
                )));
            }
            prev = e.layer;
        }
        Ok(Self {
            layers: prev,
            entries,
        })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn layer_count(&self) -> usize {
        self.layers
    }

    /// Total scalar parameter count.
    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].tensor
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].tensor
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|e| &e.tensor)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|e| &mut e.tensor)
    }

    pub fn find(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn is_congruent(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.layer == b.layer && a.name == b.name && a.tensor.shape() == b.tensor.shape()
            })
    }

    pub fn check_congruent(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(TensorError::Congruence(format!(
                "{} entries vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.layer != b.layer || a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(TensorError::Congruence(format!(
                    "({}, {}, {:?}) vs ({}, {}, {:?})",
                    a.layer,
                    a.name,
                    a.tensor.shape(),
                    b.layer,
                    b.name,
                    b.tensor.shape()
                )));
            }
        }
        Ok(())
    }

    /// First layer index of the output-side `p` layers.
    pub fn top_start(&self, p: usize) -> Result<usize> {
        if p == 0 || p > self.layers {
            return Err(TensorError::Contract(format!(
                "top-layer range p={p} outside 1..={}",
                self.layers
            )));
        }
        Ok(self.layers - p + 1)
    }

    /// The output-side `p` layers as a standalone set, renumbered `1..=p`.
    pub fn top_layers(&self, p: usize) -> Result<ParamSet> {
        let start = self.top_start(p)?;
        let entries = self
            .entries
            .iter()
            .filter(|e| e.layer >= start)
            .map(|e| ParamEntry {
                layer: e.layer - start + 1,
                name: e.name.clone(),
                tensor: e.tensor.clone(),
            })
            .collect();
        ParamSet::new(entries)
    }

    /// Same structure with every value replaced by `value`.
    pub fn filled(&self, value: f64) -> ParamSet {
        let entries = self
            .entries
            .iter()
            .map(|e| ParamEntry {
                layer: e.layer,
                name: e.name.clone(),
                tensor: Tensor::full(e.tensor.shape(), value)
                    .expect("shape taken from a valid tensor")
                    .with_grad(e.tensor.requires_grad()),
            })
            .collect();
        ParamSet {
            entries,
            layers: self.layers,
        }
    }

    pub fn zeros_like(&self) -> ParamSet {
        self.filled(0.0)
    }

    pub fn clear_grads(&mut self) {
        for t in self.tensors_mut() {
            t.clear_grad();
        }
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        for e in &mut self.entries {
            let t = std::mem::replace(&mut e.tensor, Tensor::scalar(0.0).unwrap());
            e.tensor = t.with_grad(on);
        }
    }

    /// Iterator over every scalar in entry order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors().flat_map(|t| t.data().iter().copied())
    }

    /// Bitwise equality of structure and values.
    pub fn bit_eq(&self, other: &ParamSet) -> bool {
        self.is_congruent(other)
            && self
                .tensors()
                .zip(other.tensors())
                .all(|(a, b)| a.bit_eq(b))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }

    /// Indices of entries grouped per layer, `result[l - 1]` for layer `l`.
    pub fn layer_groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.layers];
        for (i, e) in self.entries.iter().enumerate() {
            groups[e.layer - 1].push(i);
        }
        groups
    }
}
