//! Named parameter storage.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients keyed by parameter path.
pub type Gradients = BTreeMap<String, Tensor>;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self { value, grad }
    }
}

/// Parameters keyed by dot-separated path. Iteration is in sorted path order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) -> Result<()> {
        let path = path.into();
        if self.params.contains_key(&path) {
            return Err(Error::DuplicateParam(path));
        }
        self.params.insert(path, Param::new(value));
        Ok(())
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    pub fn get(&self, path: &str) -> Option<&Param> {
        self.params.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Param> {
        self.params.get_mut(path)
    }

    pub fn value(&self, path: &str) -> Result<&Tensor> {
        self.params
            .get(path)
            .map(|p| &p.value)
            .ok_or_else(|| Error::MissingParam(path.to_string()))
    }

    /// Replaces a value, keeping the stored shape.
    pub fn set_value(&mut self, path: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(path)
            .ok_or_else(|| Error::MissingParam(path.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(Error::shape("set_value", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// `grad += scale * g` for every entry of `grads`.
    pub fn accumulate_grads(&mut self, grads: &Gradients, scale: f64) -> Result<()> {
        for (path, g) in grads {
            let p = self
                .params
                .get_mut(path)
                .ok_or_else(|| Error::MissingParam(path.clone()))?;
            if p.grad.shape() != g.shape() {
                return Err(Error::shape("accumulate_grads", p.grad.shape(), g.shape()));
            }
            for (acc, v) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *acc += scale * v;
            }
        }
        Ok(())
    }

    /// Entries whose path starts with one of `prefixes`, values copied.
    pub fn subset(&self, prefixes: &[&str]) -> ParamStore {
        let params = self
            .params
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| (k.clone(), Param::new(v.value.clone())))
            .collect();
        ParamStore { params }
    }

    /// Copy with every path rewritten by `f`.
    pub fn renamed(&self, f: impl Fn(&str) -> String) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for (k, v) in &self.params {
            out.insert(f(k), v.value.clone())?;
        }
        Ok(out)
    }

    /// Moves all entries of `other` into `self`; paths must not collide.
    pub fn merge(&mut self, other: ParamStore) -> Result<()> {
        for (k, v) in other.params {
            if self.params.contains_key(&k) {
                return Err(Error::DuplicateParam(k));
            }
            self.params.insert(k, v);
        }
        Ok(())
    }
}

/// Weight of shape `[fan_in, fan_out]` drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("consistent shape")
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iteration_is_sorted() {
        let mut s = ParamStore::new();
        for p in ["b.w", "a.z", "a.b"] {
            s.insert(p, Tensor::scalar(0.0)).unwrap();
        }
        assert_eq!(s.paths().collect::<Vec<_>>(), ["a.b", "a.z", "b.w"]);
        assert!(matches!(s.insert("a.b", Tensor::scalar(1.0)), Err(Error::DuplicateParam(_))));
    }

    #[test]
    fn fan_in_bound_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = uniform_fan_in(&mut rng, 16, 8);
        assert_eq!(w.shape(), &[16, 8]);
        assert!(w.data().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn accumulate_scales() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::row(&[1.0, 2.0])).unwrap();
        let mut g = Gradients::new();
        g.insert("w".into(), Tensor::row(&[2.0, -4.0]));
        s.accumulate_grads(&g, 0.5).unwrap();
        s.accumulate_grads(&g, 0.5).unwrap();
        assert_eq!(s.get("w").unwrap().grad.data(), &[2.0, -4.0]);
        s.zero_grad();
        assert_eq!(s.get("w").unwrap().grad.data(), &[0.0, 0.0]);
    }
}
