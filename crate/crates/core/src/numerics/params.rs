//! Named parameter storage with seeded, order-independent initialization.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Map from parameter path to tensor.
///
/// Each parameter gets its own RNG stream derived from the set seed and a
/// stable hash of its path, so initialization does not depend on the order
/// in which layers register themselves.
#[derive(Debug, Clone)]
pub struct ParamSet<F> {
    seed: u64,
    params: BTreeMap<String, Tensor<F>>,
}

/// FNV-1a. `DefaultHasher` is not stable across releases; this is.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl<F: Scalar> ParamSet<F> {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            params: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fetch a parameter, creating it with uniform `±sqrt(1/fan_in)` init
    /// when absent. Re-registration with a different shape is an error.
    pub fn get_or_create(&mut self, path: &str, shape: &[usize], fan_in: usize) -> Result<Tensor<F>> {
        if let Some(existing) = self.params.get(path) {
            if existing.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "ParamSet::get_or_create",
                    lhs: existing.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            return Ok(existing.clone());
        }
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(path));
        let numel: usize = shape.iter().product();
        let data: Vec<F> = (0..numel)
            .map(|_| F::from_f64_c(rng.gen_range(-bound..bound)))
            .collect();
        let mut t = Tensor::from_vec(shape.to_vec(), data)?;
        t.set_grad_tracked(true);
        self.params.insert(path.to_string(), t.clone());
        Ok(t)
    }

    /// Fetch a parameter initialized to zeros (biases).
    pub fn get_or_zeros(&mut self, path: &str, shape: &[usize]) -> Result<Tensor<F>> {
        if let Some(existing) = self.params.get(path) {
            if existing.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "ParamSet::get_or_zeros",
                    lhs: existing.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            return Ok(existing.clone());
        }
        let mut t = Tensor::zeros(shape.to_vec())?;
        t.set_grad_tracked(true);
        self.params.insert(path.to_string(), t.clone());
        Ok(t)
    }

    pub fn insert(&mut self, path: &str, mut tensor: Tensor<F>) {
        tensor.set_grad_tracked(true);
        self.params.insert(path.to_string(), tensor);
    }

    pub fn get(&self, path: &str) -> Result<&Tensor<F>> {
        self.params
            .get(path)
            .ok_or_else(|| Error::UnknownParam(path.to_string()))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Deterministic (path-sorted) iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.params.iter()
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Reset every parameter's gradient to zeros.
    pub fn zero_grad(&mut self) {
        for t in self.params.values_mut() {
            let zeros = vec![F::zero(); t.numel()];
            t.set_grad(zeros);
        }
    }

    /// Overwrite one parameter's gradient (backward pass plumbing).
    pub(crate) fn set_grad(&mut self, path: &str, grad: Vec<F>) -> Result<()> {
        let t = self
            .params
            .get_mut(path)
            .ok_or_else(|| Error::UnknownParam(path.to_string()))?;
        if grad.len() != t.numel() {
            return Err(Error::ShapeMismatch {
                op: "ParamSet::set_grad",
                lhs: t.shape().to_vec(),
                rhs: vec![grad.len()],
            });
        }
        t.set_grad(grad);
        Ok(())
    }

    /// In-place update of one parameter (optimizer step).
    pub(crate) fn update(&mut self, path: &str, f: impl Fn(usize, F) -> F) -> Result<()> {
        let t = self
            .params
            .get_mut(path)
            .ok_or_else(|| Error::UnknownParam(path.to_string()))?;
        t.update_data(f)
    }

    /// Direct data overwrite, used by tests and model deserialization.
    pub fn set_data(&mut self, path: &str, data: Vec<F>) -> Result<()> {
        let t = self
            .params
            .get_mut(path)
            .ok_or_else(|| Error::UnknownParam(path.to_string()))?;
        if data.len() != t.numel() {
            return Err(Error::ShapeMismatch {
                op: "ParamSet::set_data",
                lhs: t.shape().to_vec(),
                rhs: vec![data.len()],
            });
        }
        let mut nt = Tensor::from_vec(t.shape().to_vec(), data)?;
        nt.set_grad_tracked(true);
        *t = nt;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_order_independent() {
        let mut a = ParamSet::<f64>::new(7);
        let wa = a.get_or_create("m.w", &[3, 2], 3).unwrap();
        let ba = a.get_or_create("m.b", &[2], 3).unwrap();

        let mut b = ParamSet::<f64>::new(7);
        let bb = b.get_or_create("m.b", &[2], 3).unwrap();
        let wb = b.get_or_create("m.w", &[3, 2], 3).unwrap();

        assert_eq!(wa.data(), wb.data());
        assert_eq!(ba.data(), bb.data());
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = ParamSet::<f64>::new(1);
        let mut b = ParamSet::<f64>::new(2);
        let wa = a.get_or_create("w", &[4, 4], 4).unwrap();
        let wb = b.get_or_create("w", &[4, 4], 4).unwrap();
        assert_ne!(wa.data(), wb.data());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut ps = ParamSet::<f64>::new(3);
        let w = ps.get_or_create("w", &[16, 16], 16).unwrap();
        let bound = (1.0f64 / 16.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn shape_conflict_rejected() {
        let mut ps = ParamSet::<f64>::new(3);
        ps.get_or_create("w", &[2, 2], 2).unwrap();
        assert!(ps.get_or_create("w", &[3, 2], 3).is_err());
    }

    #[test]
    fn zero_grad_populates_zeros() {
        let mut ps = ParamSet::<f64>::new(3);
        ps.get_or_create("w", &[2, 2], 2).unwrap();
        ps.zero_grad();
        assert_eq!(ps.get("w").unwrap().grad().unwrap(), &[0.0; 4]);
    }
}
