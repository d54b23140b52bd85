//! First-order optimisers over a [`ParamStore`].
//!
//! Only bindings whose group is in the trainable set *and* that received a
//! gradient are touched; everything else stays bitwise unchanged.

use alloc::vec::Vec;

use crate::nn::{Grads, GroupSet, ModelGraph, ParamStore, Real};

pub trait Optimizer<T: Real> {
    fn step(&mut self, graph: &ModelGraph, params: &mut ParamStore<T>, grads: &Grads<T>, trainable: GroupSet);
    fn set_learning_rate(&mut self, lr: f64);
    fn learning_rate(&self) -> f64;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub weight_decay: f64,
}

impl<T: Real> Optimizer<T> for Sgd {
    fn step(&mut self, graph: &ModelGraph, params: &mut ParamStore<T>, grads: &Grads<T>, trainable: GroupSet) {
        let lr = T::of(self.lr);
        let wd = T::of(self.weight_decay);
        for (b, (layer, g)) in params.layers.iter_mut().zip(&grads.layers).enumerate() {
            let Some(g) = g else { continue };
            if !trainable.contains(graph.bindings[b].group) {
                continue;
            }
            for (p, gv) in layer.tensors.iter_mut().flatten().zip(g.iter().flatten()) {
                *p -= lr * (*gv + wd * *p);
            }
        }
    }
    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
    fn learning_rate(&self) -> f64 {
        self.lr
    }
}

/// Adaptive-moment optimiser with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Update count per binding.
    pub steps: Vec<u64>,
    pub m: Vec<Vec<Vec<T>>>,
    pub v: Vec<Vec<Vec<T>>>,
}

impl<T: Real> Adam<T> {
    pub fn new(graph: &ModelGraph, lr: f64) -> Self {
        let zeros = || -> Vec<Vec<Vec<T>>> {
            graph.bindings.iter().map(|b| b.tensors.iter().map(|s| alloc::vec![T::zero(); s.len]).collect()).collect()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            steps: alloc::vec![0; graph.bindings.len()],
            m: zeros(),
            v: zeros(),
        }
    }
}

impl<T: Real> Optimizer<T> for Adam<T> {
    fn step(&mut self, graph: &ModelGraph, params: &mut ParamStore<T>, grads: &Grads<T>, trainable: GroupSet) {
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let one = T::one();
        for (b, (layer, g)) in params.layers.iter_mut().zip(&grads.layers).enumerate() {
            let Some(g) = g else { continue };
            if !trainable.contains(graph.bindings[b].group) {
                continue;
            }
            self.steps[b] += 1;
            let t = self.steps[b] as i32;
            let c1 = one - b1.powi(t);
            let c2 = one - b2.powi(t);
            let lr = T::of(self.lr);
            let eps = T::of(self.eps);
            let wd = T::of(self.weight_decay);
            for (k, tensor) in layer.tensors.iter_mut().enumerate() {
                let (m, v) = (&mut self.m[b][k], &mut self.v[b][k]);
                for i in 0..tensor.len() {
                    let gv = g[k][i] + wd * tensor[i];
                    m[i] = b1 * m[i] + (one - b1) * gv;
                    v[i] = b2 * v[i] + (one - b2) * gv * gv;
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    tensor[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
    fn learning_rate(&self) -> f64 {
        self.lr
    }
}
