use std::collections::BTreeMap;

use super::Gradients;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    value: Tensor,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named trainable tensors with accumulated gradients and Adam moments.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if value.is_complex() {
            return Err(Error::invalid(format!("parameter {name} is complex")));
        }
        if self.slots.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        let n = value.numel();
        self.slots.insert(
            name.to_string(),
            Slot {
                value,
                grad: vec![0.0; n],
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.value)
    }

    /// Replaces a value in place; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        if slot.value.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter {name}: {:?} vs {:?}",
                slot.value.shape(),
                value.shape()
            )));
        }
        slot.value = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.numel()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn grad(&self, name: &str) -> Option<&[f64]> {
        self.slots.get(name).map(|s| s.grad.as_slice())
    }

    /// Adds `weight * grad` for every parameter present in `grads`.
    pub fn accumulate(&mut self, grads: &Gradients, weight: f64) -> Result<()> {
        for (name, g) in grads.params() {
            let slot = self
                .slots
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter {name}")))?;
            if slot.grad.len() != g.len() {
                return Err(Error::shape(format!("gradient of {name}")));
            }
            for (a, b) in slot.grad.iter_mut().zip(g) {
                *a += weight * b;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for s in self.slots.values_mut() {
            s.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Euclidean norm over all accumulated gradients.
    pub fn grad_norm(&self) -> f64 {
        self.slots
            .values()
            .flat_map(|s| s.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their joint norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let k = max_norm / norm;
            for s in self.slots.values_mut() {
                s.grad.iter_mut().for_each(|g| *g *= k);
            }
        }
    }

    /// One bias-corrected Adam update from the accumulated gradients, which
    /// are cleared afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        for (name, s) in &self.slots {
            if let Some(j) = s.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {name} at index {j} is {}",
                    s.grad[j]
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for s in self.slots.values_mut() {
            let values = s.value.data_mut();
            for j in 0..values.len() {
                let g = s.grad[j];
                s.m[j] = cfg.beta1 * s.m[j] + (1.0 - cfg.beta1) * g;
                s.v[j] = cfg.beta2 * s.v[j] + (1.0 - cfg.beta2) * g * g;
                let mhat = s.m[j] / bc1;
                let vhat = s.v[j] / bc2;
                values[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
            s.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        Ok(())
    }

    pub(crate) fn optimizer_state(&self) -> impl Iterator<Item = (&str, &[f64], &[f64])> {
        self.slots
            .iter()
            .map(|(k, s)| (k.as_str(), s.m.as_slice(), s.v.as_slice()))
    }

    pub(crate) fn restore_state(&mut self, name: &str, m: Vec<f64>, v: Vec<f64>) -> Result<()> {
        let slot = self.slots.get_mut(name).ok_or_else(|| {
            Error::invalid(format!("optimizer state for unknown parameter {name}"))
        })?;
        if m.len() != slot.m.len() || v.len() != slot.v.len() {
            return Err(Error::shape(format!("optimizer state of {name}")));
        }
        slot.m = m;
        slot.v = v;
        Ok(())
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }
}
