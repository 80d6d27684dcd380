use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::nn::tape::{Gradients, Tape};
use crate::nn::tensor::Tensor;

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

/// Identifies one entry of one [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamKey {
    pub store: u64,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Buffers such as batch-norm running statistics are stored but never
    /// updated by the optimizer.
    pub trainable: bool,
}

/// Named, ordered collection of parameters and buffers owned by one model.
#[derive(Debug)]
pub struct ParamStore {
    id: u64,
    params: Vec<Param>,
    index: HashMap<String, usize>,
    requires_grad: bool,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        ParamStore {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            params: self.params.clone(),
            index: self.index.clone(),
            requires_grad: self.requires_grad,
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
            index: HashMap::new(),
            requires_grad: true,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamKey {
        self.insert(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamKey {
        self.insert(name.into(), value, false)
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> ParamKey {
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape().to_vec());
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value,
            grad,
            trainable,
        });
        ParamKey {
            store: self.id,
            index: self.params.len() - 1,
        }
    }

    pub fn key(&self, name: &str) -> Result<ParamKey> {
        self.index
            .get(name)
            .map(|&index| ParamKey {
                store: self.id,
                index,
            })
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        let key = self.key(name)?;
        Ok(&self.params[key.index])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        let key = self.key(name)?;
        Ok(&mut self.params[key.index])
    }

    pub fn by_key(&self, key: ParamKey) -> &Param {
        assert_eq!(key.store, self.id, "parameter key from another store");
        &self.params[key.index]
    }

    pub fn by_key_mut(&mut self, key: ParamKey) -> &mut Param {
        assert_eq!(key.store, self.id, "parameter key from another store");
        &mut self.params[key.index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Whether leaves registered from this store take part in backprop.
    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds the gradients of every leaf on `tape` that came from this store.
    pub fn accumulate_grads(&mut self, tape: &Tape, grads: &Gradients) {
        for (var, key) in tape.param_leaves() {
            if key.store != self.id {
                continue;
            }
            if let Some(g) = grads.get(var) {
                let dst = self.params[key.index].grad.data_mut();
                for (d, s) in dst.iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
        }
    }

    /// Writes batch-norm running statistics recorded during a train-mode
    /// forward pass back into this store's buffers.
    pub fn commit_running_stats(&mut self, tape: &Tape) {
        for update in tape.running_stat_updates() {
            if update.mean.store != self.id {
                continue;
            }
            let m = update.momentum;
            let mean = self.params[update.mean.index].value.data_mut();
            for (r, b) in mean.iter_mut().zip(&update.batch_mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            let var = self.params[update.var.index].value.data_mut();
            for (r, b) in var.iter_mut().zip(&update.batch_var) {
                *r = (1.0 - m) * *r + m * b;
            }
        }
    }

    /// Order-sensitive sum over all trainable values; a quick change detector.
    pub fn checksum(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.value.data().iter().enumerate())
            .map(|(i, v)| v * (1.0 + (i % 7) as f64))
            .sum()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }

    /// Replaces every value from a name-matched list; shapes must agree.
    pub fn load_named(&mut self, tensors: Vec<(String, Tensor)>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, model expects {}",
                tensors.len(),
                self.params.len()
            )));
        }
        for (name, value) in tensors {
            let p = self.get_mut(&name)?;
            if p.value.shape() != value.shape() {
                return Err(Error::dim(format!(
                    "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value;
        }
        Ok(())
    }
}
