//! Flat, named parameter registry.

use serde::{Deserialize, Serialize};

use super::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// All trainable tensors of the encoder stored back to back in one buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    entries: Vec<ParamInfo>,
    data: Vec<T>,
}

impl<T: Scalar> EncoderParams<T> {
    pub(crate) fn empty() -> Self {
        Self {
            entries: Vec::new(),
            data: Vec::new(),
        }
    }

    pub(crate) fn register(&mut self, name: String, shape: Vec<usize>, init: Vec<T>) -> ParamId {
        let len: usize = shape.iter().product();
        assert_eq!(init.len(), len, "initializer size for {name}");
        let id = ParamId(self.entries.len());
        self.entries.push(ParamInfo {
            name,
            shape,
            offset: self.data.len(),
            len,
        });
        self.data.extend(init);
        id
    }

    pub fn entries(&self) -> &[ParamInfo] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        let e = &self.entries[id.0];
        &self.data[e.offset..e.offset + e.len]
    }

    pub fn by_name(&self, name: &str) -> Option<&[T]> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &self.data[e.offset..e.offset + e.len])
    }

    pub fn flat(&self) -> &[T] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.data.len()]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same registry with every value converted to another precision.
    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        EncoderParams {
            entries: self.entries.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub(crate) fn from_parts(entries: Vec<ParamInfo>, data: Vec<T>) -> Self {
        Self { entries, data }
    }
}

/// Gradient buffer laid out like [`EncoderParams`].
pub(crate) fn grad_slice<'a, T>(entries: &[ParamInfo], grads: &'a mut [T], id: ParamId) -> &'a mut [T] {
    let e = &entries[id.0];
    &mut grads[e.offset..e.offset + e.len]
}
