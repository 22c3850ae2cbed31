use std::collections::BTreeMap;

use crate::error::{shape_err, DiffError, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    first_moment: Vec<T>,
    second_moment: Vec<T>,
    step: u64,
}

impl<T: Scalar> Param<T> {
    fn new(value: Tensor<T>) -> Self {
        let n = value.len();
        Self {
            value,
            first_moment: vec![T::zero(); n],
            second_moment: vec![T::zero(); n],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Outcome of one [`ParamStore::adam_step`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AdamReport {
    pub updated: usize,
    /// Parameters whose gradient held a non-finite value; left untouched.
    pub rejected: Vec<String>,
}

/// Named parameters with per-parameter Adam state, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Param<T>>,
    rejected_total: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            rejected_total: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), Param::new(value));
    }

    /// Insert a tensor of `shape` drawn from `N(0, std²)`.
    pub fn insert_normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut Rng) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(std * rng.normal())).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape/data agree"));
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape.to_vec()));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn size(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn rejected_total(&self) -> u64 {
        self.rejected_total
    }

    /// Same parameter values with fresh optimiser state.
    pub fn values_only(&self) -> Self {
        let mut out = Self::new();
        for (k, p) in &self.params {
            out.insert(k.clone(), p.value.clone());
        }
        out
    }

    /// Put every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &Tape<T>, requires_grad: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), tape.leaf(p.value.clone(), requires_grad)))
            .collect();
        Bound { vars }
    }

    /// One Adam update with bias correction. Gradients are looked up by
    /// parameter name; parameters without a gradient are skipped.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor<T>>, cfg: &AdamConfig) -> Result<AdamReport> {
        let mut report = AdamReport::default();
        let (lr, b1, b2, eps) = (T::lit(cfg.lr), T::lit(cfg.beta1), T::lit(cfg.beta2), T::lit(cfg.eps));
        for (name, g) in grads {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| DiffError::UnknownParam(name.clone()))?;
            if g.shape() != p.value.shape() {
                return Err(shape_err(
                    "adam_step",
                    format!("`{name}` is {:?}, gradient {:?}", p.value.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                log::warn!("adam: non-finite gradient for `{name}`, update rejected");
                report.rejected.push(name.clone());
                self.rejected_total += 1;
                continue;
            }
            p.step += 1;
            let t = p.step as i32;
            let c1 = T::one() - b1.powi(t);
            let c2 = T::one() - b2.powi(t);
            let values = p.value.data_mut();
            for (((v, m), s), &gi) in values
                .iter_mut()
                .zip(p.first_moment.iter_mut())
                .zip(p.second_moment.iter_mut())
                .zip(g.data())
            {
                *m = b1 * *m + (T::one() - b1) * gi;
                *s = b2 * *s + (T::one() - b2) * gi * gi;
                let m_hat = *m / c1;
                let s_hat = *s / c2;
                *v = *v - lr * m_hat / (s_hat.sqrt() + eps);
            }
            report.updated += 1;
        }
        Ok(report)
    }
}

/// Parameters placed on one tape, addressable by name.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradient of `loss` with respect to every bound parameter, as values.
    pub fn gradients<T: Scalar>(&self, tape: &Tape<T>, loss: Var) -> Result<BTreeMap<String, Tensor<T>>> {
        let names: Vec<&String> = self.vars.keys().collect();
        let vars: Vec<Var> = self.vars.values().copied().collect();
        let grads = tape.grad_of(loss, &vars, false)?;
        Ok(names
            .into_iter()
            .zip(grads.grads)
            .map(|(n, g)| (n.clone(), (*tape.value(g)).clone()))
            .collect())
    }
}
