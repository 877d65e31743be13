//! Named learnable tensors, their seeded initialization, and the plumbing
//! that carries them into a graph and their gradients back out.
//!
//! A [`ParamStore`] owns every weight of the network under a stable dotted
//! name (`enc.sa1.mlp0.w`, `head.k2.mlp1.b`, ...). A [`ParamLease`] hands a
//! store's tensors to one [`Graph`] as gradient-tracked leaves, each leased
//! at most once per graph so multi-step forwards share parameters instead
//! of duplicating them. After backward, [`GradStore::collect`] pulls the
//! per-name gradients back out for the optimizer.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

/// All learnable tensors of a model, keyed by dotted name. Iteration order
/// is the sorted name order everywhere, which keeps initialization,
/// updates, and checkpoints aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Real> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) {
        self.tensors.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.values.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

/// Registers parameters into a store with one shared RNG, so the full
/// initialization is a pure function of the seed and registration order.
pub struct ParamInit<'a, T: Real> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha20Rng,
}

impl<'a, T: Real> ParamInit<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha20Rng) -> Self {
        ParamInit { store, rng }
    }

    /// Glorot-uniform weight `[fan_in, fan_out]` under `<name>.w` plus a
    /// zero bias `[1, fan_out]` under `<name>.b`.
    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values = (0..fan_in * fan_out)
            .map(|_| T::of(self.rng.gen_range(-limit..limit)))
            .collect();
        self.store
            .insert(&format!("{name}.w"), Tensor::new(vec![fan_in, fan_out], values).unwrap());
        self.store.insert(&format!("{name}.b"), Tensor::zeros(vec![1, fan_out]));
    }

    /// Like `linear` but with a constant bias, for gates whose resting
    /// state should lean one way.
    pub fn linear_with_bias(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: f64) {
        self.linear(name, fan_in, fan_out);
        let b = self.store.get_mut(&format!("{name}.b")).unwrap();
        b.values.iter_mut().for_each(|v| *v = T::of(bias));
    }
}

/// Hands one store's tensors to one graph, as leaves created on first use.
/// Leasing the same name twice returns the same [`Var`], which is what
/// makes weight sharing across steps work: gradients from every step
/// accumulate into one leaf.
pub struct ParamLease<'a, T: Real> {
    store: &'a ParamStore<T>,
    vars: BTreeMap<String, Var>,
}

impl<'a, T: Real> ParamLease<'a, T> {
    pub fn new(store: &'a ParamStore<T>) -> Self {
        ParamLease { store, vars: BTreeMap::new() }
    }

    pub fn var(&mut self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let t = self.store.get(name)?.clone().with_grad();
        let v = g.leaf(t);
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Forces `name` to resolve to an existing graph node instead of the
    /// store's tensor. Lets a finite-difference harness steer one
    /// parameter while the rest lease normally.
    pub fn preset(&mut self, name: &str, var: Var) {
        self.vars.insert(name.to_string(), var);
    }

    /// Names leased so far with their graph leaves, in name order.
    pub fn leased(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Per-name gradients pulled out of a finished graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStore<T: Real> {
    grads: BTreeMap<String, Vec<T>>,
}

impl<T: Real> Default for GradStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> GradStore<T> {
    pub fn new() -> Self {
        GradStore { grads: BTreeMap::new() }
    }

    /// Reads the gradient of every leased parameter after `backward`.
    pub fn collect(g: &Graph<T>, lease: &ParamLease<'_, T>) -> Result<Self> {
        let mut grads = BTreeMap::new();
        for (name, var) in lease.leased() {
            let grad = g.grad(var).ok_or_else(|| {
                Error::contract(format!("parameter {name:?} has no gradient; run backward first"))
            })?;
            grads.insert(name.to_string(), grad.to_vec());
        }
        Ok(GradStore { grads })
    }

    pub fn get(&self, name: &str) -> Result<&[T]> {
        self.grads
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::contract(format!("no gradient recorded for {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Elementwise sum, for accumulating a batch one item at a time.
    pub fn accumulate(&mut self, other: &GradStore<T>) -> Result<()> {
        for (name, src) in &other.grads {
            match self.grads.get_mut(name) {
                None => {
                    self.grads.insert(name.clone(), src.clone());
                }
                Some(dst) => {
                    if dst.len() != src.len() {
                        return Err(Error::dim(format!(
                            "gradient length mismatch for {name:?}: {} vs {}",
                            dst.len(),
                            src.len()
                        )));
                    }
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = *d + *s;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for v in self.grads.values_mut() {
            v.iter_mut().for_each(|x| *x = *x * factor);
        }
    }

    /// Largest absolute entry, for non-finite and clipping checks.
    pub fn max_abs(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|v| v.iter())
            .map(|x| x.as_f64().abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn seeded_store(seed: u64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut init = ParamInit::new(&mut store, &mut rng);
        init.linear("a", 4, 3);
        init.linear("b", 3, 2);
        store
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let s1 = seeded_store(7);
        let s2 = seeded_store(7);
        assert_eq!(s1, s2);
        assert_ne!(s1, seeded_store(8));
        let w = s1.get("a.w").unwrap();
        assert_eq!(w.shape, vec![4, 3]);
        let limit = (6.0f64 / 7.0).sqrt();
        assert!(w.values.iter().all(|v| v.abs() < limit));
        let b = s1.get("a.b").unwrap();
        assert_eq!(b.shape, vec![1, 3]);
        assert!(b.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lease_returns_the_same_var_for_the_same_name() {
        let store = seeded_store(1);
        let mut g = Graph::<f64>::new();
        let mut lease = ParamLease::new(&store);
        let v1 = lease.var(&mut g, "a.w").unwrap();
        let v2 = lease.var(&mut g, "a.w").unwrap();
        assert_eq!(v1, v2);
        assert!(lease.var(&mut g, "missing").is_err());
    }

    #[test]
    fn shared_lease_accumulates_gradients_across_uses() {
        let mut store = ParamStore::<f64>::new();
        store.insert("x", Tensor::new(vec![1, 1], vec![3.0]).unwrap());
        let mut g = Graph::new();
        let mut lease = ParamLease::new(&store);
        let x1 = lease.var(&mut g, "x").unwrap();
        let x2 = lease.var(&mut g, "x").unwrap();
        // x + x: the one leaf should see gradient 2.
        let y = g.add(x1, x2).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        let grads = GradStore::collect(&g, &lease).unwrap();
        assert_eq!(grads.get("x").unwrap(), &[2.0]);
    }

    #[test]
    fn gradstore_accumulates_and_scales() {
        let mut a = GradStore::<f64>::new();
        let mut g = Graph::new();
        let store = {
            let mut s = ParamStore::<f64>::new();
            s.insert("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
            s
        };
        let mut lease = ParamLease::new(&store);
        let w = lease.var(&mut g, "w").unwrap();
        let loss = g.sum(w);
        g.backward(loss).unwrap();
        let one = GradStore::collect(&g, &lease).unwrap();
        a.accumulate(&one).unwrap();
        a.accumulate(&one).unwrap();
        a.scale(0.5);
        assert_eq!(a.get("w").unwrap(), &[1.0, 1.0]);
        assert_eq!(a.max_abs(), 1.0);
    }

    #[test]
    fn collect_without_backward_is_a_contract_error() {
        let store = seeded_store(2);
        let mut g = Graph::<f64>::new();
        let mut lease = ParamLease::new(&store);
        lease.var(&mut g, "a.w").unwrap();
        assert!(matches!(
            GradStore::collect(&g, &lease),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn cast_round_trip_preserves_f32_values() {
        let s = seeded_store(3);
        let f32_store: ParamStore<f32> = s.cast();
        let back: ParamStore<f64> = f32_store.cast();
        for (name, t) in f32_store.iter() {
            let b = back.get(name).unwrap();
            for (x, y) in t.values.iter().zip(&b.values) {
                assert_eq!(*x as f64, *y);
            }
        }
    }
}
