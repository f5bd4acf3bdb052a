use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::{NumericsError, Tensor};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors owned by one network.
///
/// Every store carries a process-unique id so a tape can tell which store a
/// bound parameter came from; clones get a fresh id.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        ParamStore { uid: fresh_uid(), names: self.names.clone(), tensors: self.tensors.clone() }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape() && a.data() == b.data())
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { uid: fresh_uid(), names: Vec::new(), tensors: Vec::new() }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.tracked());
        ParamId(self.tensors.len() - 1)
    }

    /// Adds a parameter initialised uniformly in `[-scale, scale)`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> Result<ParamId, NumericsError> {
        let t = Tensor::uniform(shape, -scale, scale, rng)?;
        Ok(self.add(name, t))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId, NumericsError> {
        let t = Tensor::zeros(shape)?;
        Ok(self.add(name, t))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Overwrites values from `(name, tensor)` records; names and shapes must match.
    pub fn load_values(&mut self, records: &[(String, Tensor)]) -> Result<(), NumericsError> {
        for (name, tensor) in records {
            let id = self
                .id_of(name)
                .ok_or_else(|| NumericsError::UnknownParameter { name: name.clone() })?;
            let slot = &mut self.tensors[id.0];
            if slot.shape() != tensor.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "load_values",
                    detail: format!("{name}: stored {:?}, file {:?}", slot.shape(), tensor.shape()),
                });
            }
            slot.data_mut().copy_from_slice(tensor.data());
            slot.zero_grad();
        }
        Ok(())
    }

    pub fn records(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.tensors.iter().map(Tensor::detached)).collect()
    }
}
