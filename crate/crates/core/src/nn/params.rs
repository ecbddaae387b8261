//! Named learnable tensors with Adam moment state.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub weight: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
}

impl Param {
    pub fn new(weight: Tensor) -> Self {
        let adam_m = Tensor::zeros(weight.shape());
        let adam_v = Tensor::zeros(weight.shape());
        Param {
            weight,
            adam_m,
            adam_v,
        }
    }
}

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

/// Parameters iterate in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
    step_count: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, weight: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        self.entries.insert(name, Param::new(weight));
        Ok(())
    }

    pub(crate) fn insert_param(&mut self, name: String, param: Param) -> Result<()> {
        if param.adam_m.shape() != param.weight.shape()
            || param.adam_v.shape() != param.weight.shape()
        {
            return Err(Error::Shape(format!(
                "adam state for {name:?} does not match weight shape {:?}",
                param.weight.shape()
            )));
        }
        if self.entries.insert(name.clone(), param).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn weight(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.weight)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name:?}")))
    }

    pub fn weight_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.weight)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub(crate) fn set_step_count(&mut self, steps: u64) {
        self.step_count = steps;
    }

    /// Bitwise equality of every weight and Adam moment plus the step count.
    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.step_count == other.step_count
            && self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.weight.bit_eq(&b.weight)
                    && a.adam_m.bit_eq(&b.adam_m)
                    && a.adam_v.bit_eq(&b.adam_v)
            })
    }
}

/// Total number of scalar weights (moment tensors excluded).
pub fn count_parameters(store: &ParamStore) -> usize {
    store.entries.values().map(|p| p.weight.len()).sum()
}

/// One Adam update with bias correction (β1 = 0.9, β2 = 0.999, ε = 1e-8).
///
/// `grads` must hold exactly one correctly shaped tensor per parameter.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
    for name in grads.keys() {
        if !store.entries.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "adam_step: gradient for unknown parameter {name:?}"
            )));
        }
    }
    for (name, param) in &store.entries {
        let g = grads.get(name).ok_or_else(|| {
            Error::InvalidArgument(format!("adam_step: missing gradient for {name:?}"))
        })?;
        param.weight.check_same_shape(g, name)?;
    }

    store.step_count += 1;
    let t = store.step_count as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, param) in store.entries.iter_mut() {
        let g = &grads[name];
        let Param {
            weight,
            adam_m,
            adam_v,
        } = param;
        for (((w, m), v), &g) in weight
            .data_mut()
            .iter_mut()
            .zip(adam_m.data_mut())
            .zip(adam_v.data_mut())
            .zip(g.data())
        {
            let g = g as f64;
            let m_new = ADAM_BETA1 * *m as f64 + (1.0 - ADAM_BETA1) * g;
            let v_new = ADAM_BETA2 * *v as f64 + (1.0 - ADAM_BETA2) * g * g;
            *m = m_new as f32;
            *v = v_new as f32;
            let m_hat = m_new / bc1;
            let v_hat = v_new / bc2;
            *w = (*w as f64 - lr * m_hat / (v_hat.sqrt() + ADAM_EPS)) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f32) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w)).unwrap();
        s
    }

    fn grad(value: f32) -> Gradients {
        [("w".to_string(), Tensor::scalar(value))].into()
    }

    #[test]
    fn zero_gradient_leaves_weights_and_counts_step() {
        let mut s = scalar_store(1.5);
        adam_step(&mut s, &grad(0.0), 0.1).unwrap();
        assert_eq!(s.weight("w").unwrap().data(), &[1.5]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [-3.0f32, 0.02, 400.0] {
            let mut s = scalar_store(0.0);
            adam_step(&mut s, &grad(g), 1e-3).unwrap();
            let w = s.weight("w").unwrap().data()[0] as f64;
            assert!((w + 1e-3 * g.signum() as f64).abs() < 1e-6, "g={g} w={w}");
        }
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        let mut s = scalar_store(0.0);
        for _ in 0..100 {
            let w = s.weight("w").unwrap().data()[0];
            adam_step(&mut s, &grad(2.0 * (w - 3.0)), 0.1).unwrap();
        }
        let w = s.weight("w").unwrap().data()[0];
        assert!((w - 3.0).abs() < 0.5, "w = {w}");
    }

    #[test]
    fn key_mismatch_rejected() {
        let mut s = scalar_store(0.0);
        assert!(adam_step(&mut s, &Gradients::new(), 0.1).is_err());
        let mut extra = grad(1.0);
        extra.insert("other".into(), Tensor::scalar(1.0));
        assert!(adam_step(&mut s, &extra, 0.1).is_err());
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn parameter_counting() {
        assert_eq!(count_parameters(&ParamStore::new()), 0);
        let mut s = ParamStore::new();
        s.insert("k", Tensor::zeros(&[3, 3, 1, 1])).unwrap();
        s.insert("b", Tensor::zeros(&[1])).unwrap();
        assert_eq!(count_parameters(&s), 10);
        assert!(s.insert("k", Tensor::zeros(&[1])).is_err());
    }
}
