use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::graph::{GroupSet, Init, LayerKind, ModelGraph, ParamGroup};
use super::ops::BnStats;
use super::real::Real;

/// Learnable tensors and running statistics of one binding.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub tensors: Vec<Vec<T>>,
    pub buffers: Vec<Vec<T>>,
}

/// All parameters of a graph, indexed by binding.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    pub layers: Vec<LayerParams<T>>,
}

/// Momentum of the running normalisation statistics.
pub const BN_MOMENTUM: f64 = 0.1;

impl<T: Real> ParamStore<T> {
    /// He-normal convolution weights, unit/zero normalisation parameters.
    pub fn init(graph: &ModelGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = graph
            .bindings
            .iter()
            .map(|b| {
                let fill = |slot: &super::graph::TensorSlot, rng: &mut ChaCha8Rng| -> Vec<T> {
                    match slot.init {
                        Init::Zeros => vec![T::zero(); slot.len],
                        Init::Ones => vec![T::one(); slot.len],
                        Init::He { fan_in } => {
                            let std = libm::sqrt(2.0 / fan_in as f64);
                            (0..slot.len)
                                .map(|_| {
                                    let z: f64 = StandardNormal.sample(rng);
                                    T::of(z * std)
                                })
                                .collect()
                        }
                    }
                };
                LayerParams {
                    tensors: b.tensors.iter().map(|s| fill(s, &mut rng)).collect(),
                    buffers: b.buffers.iter().map(|s| fill(s, &mut rng)).collect(),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        ParamStore {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    tensors: l.tensors.iter().map(conv).collect(),
                    buffers: l.buffers.iter().map(conv).collect(),
                })
                .collect(),
        }
    }

    /// FNV-1a hash over the bit patterns of every tensor and buffer of the
    /// selected groups.
    pub fn checksum(&self, graph: &ModelGraph, groups: GroupSet) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (b, l) in graph.bindings.iter().zip(&self.layers) {
            if !groups.contains(b.group) {
                continue;
            }
            for v in l.tensors.iter().chain(&l.buffers).flatten() {
                for byte in v.f64().to_bits().to_le_bytes() {
                    h ^= u64::from(byte);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Flattened learnable values of one group.
    pub fn group_values(&self, graph: &ModelGraph, group: ParamGroup) -> Vec<T> {
        graph
            .bindings
            .iter()
            .zip(&self.layers)
            .filter(|(b, _)| b.group == group)
            .flat_map(|(_, l)| l.tensors.iter().flatten().copied())
            .collect()
    }

    /// Zeroes every residual-block parameter, turning each block into
    /// `relu(x)`.
    pub fn zero_residual_branches(&mut self, graph: &ModelGraph) {
        for (b, l) in graph.bindings.iter().zip(&mut self.layers) {
            if b.kind == LayerKind::ResidualBlock {
                for t in &mut l.tensors {
                    t.fill(T::zero());
                }
            }
        }
    }

    /// Folds batch statistics of a training-mode pass into the running
    /// statistics, in the order they were produced.
    pub(crate) fn apply_batch_stats(&mut self, stats: &[(usize, usize, BnStats<T>)]) {
        let m = T::of(BN_MOMENTUM);
        let keep = T::one() - m;
        for (binding, bn, s) in stats {
            let l = &mut self.layers[*binding];
            for (r, &v) in l.buffers[2 * bn].iter_mut().zip(&s.mean) {
                *r = keep * *r + m * v;
            }
            for (r, &v) in l.buffers[2 * bn + 1].iter_mut().zip(&s.var_unbiased) {
                *r = keep * *r + m * v;
            }
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.tensors).map(Vec::len).sum()
    }
}

/// Parameter gradients, `None` for bindings that received none.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T> {
    pub layers: Vec<Option<Vec<Vec<T>>>>,
}

impl<T: Real> Grads<T> {
    pub fn empty(graph: &ModelGraph) -> Self {
        Self { layers: vec![None; graph.bindings.len()] }
    }

    pub(crate) fn slot(&mut self, graph: &ModelGraph, binding: usize) -> &mut Vec<Vec<T>> {
        self.layers[binding]
            .get_or_insert_with(|| graph.bindings[binding].tensors.iter().map(|s| vec![T::zero(); s.len]).collect())
    }

    pub fn scale(&mut self, k: T) {
        for v in self.layers.iter_mut().flatten().flatten().flatten() {
            *v *= k;
        }
    }

    /// Adds `k · other`.
    pub fn add_scaled(&mut self, graph: &ModelGraph, other: &Self, k: T) {
        for (b, o) in other.layers.iter().enumerate() {
            if let Some(o) = o {
                let dst = self.slot(graph, b);
                for (d, s) in dst.iter_mut().flatten().zip(o.iter().flatten()) {
                    *d += k * *s;
                }
            }
        }
    }

    /// Flattened gradient of one group (zeros where absent).
    pub fn group_values(&self, graph: &ModelGraph, group: ParamGroup) -> Vec<T> {
        let mut out = Vec::new();
        for (b, g) in graph.bindings.iter().zip(&self.layers) {
            if b.group != group {
                continue;
            }
            match g {
                Some(g) => out.extend(g.iter().flatten().copied()),
                None => out.extend(core::iter::repeat_n(T::zero(), b.param_count())),
            }
        }
        out
    }
}
