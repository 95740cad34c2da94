use std::collections::BTreeMap;

use crate::{Scalar, Tensor};

/// Named trainable parameters plus non-trainable buffers (running
/// statistics). Iteration order is the lexicographic order of names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn insert_param(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        assert!(
            !self.buffers.contains_key(&name),
            "{name} already registered as buffer"
        );
        self.params.insert(name, value);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        assert!(
            !self.params.contains_key(&name),
            "{name} already registered as parameter"
        );
        self.buffers.insert(name, value);
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffers.get(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.buffers.get_mut(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Copy without any parameter or buffer whose name starts with `prefix`.
    pub fn without_prefix(&self, prefix: &str) -> Self {
        let keep = |m: &BTreeMap<String, Tensor<T>>| {
            m.iter()
                .filter(|(k, _)| !k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect()
        };
        ParamStore {
            params: keep(&self.params),
            buffers: keep(&self.buffers),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let cast = |m: &BTreeMap<String, Tensor<T>>| {
            m.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
        };
        ParamStore {
            params: cast(&self.params),
            buffers: cast(&self.buffers),
        }
    }
}
