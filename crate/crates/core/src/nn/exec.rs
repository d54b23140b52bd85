//! Graph execution: forward pass with caches, reverse-mode backward pass.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Activation, GroupSet, LayerKind, ModelGraph, Normalization};
use super::ops::{self, BnCache, BnStats};
use super::params::{Grads, ParamStore};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Evaluation uses stored normalisation statistics everywhere. Training
/// uses batch statistics only in the listed groups; the others behave as in
/// evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train(GroupSet),
}

impl Mode {
    fn batch_stats(self, graph: &ModelGraph, node: usize) -> bool {
        match (self, graph.group_of(node)) {
            (Mode::Train(set), Some(g)) => set.contains(g),
            _ => false,
        }
    }
}

enum Cache<T> {
    Empty,
    Conv(Option<BnCache<T>>),
    Residual { bn1: BnCache<T>, r1: Tensor<T>, bn2: BnCache<T> },
    Pool(Vec<u8>),
}

/// Activations and backward caches of one forward pass.
pub struct ForwardPass<T> {
    values: Vec<Option<Tensor<T>>>,
    caches: Vec<Cache<T>>,
    pub(crate) stats: Vec<(usize, usize, BnStats<T>)>,
    pub mode: Mode,
}

impl<T: Real> ForwardPass<T> {
    pub fn value(&self, node: usize) -> Option<&Tensor<T>> {
        self.values[node].as_ref()
    }

    /// Pre-softmax scores of a head, if it was evaluated.
    pub fn logits(&self, graph: &ModelGraph, head: &str) -> Option<&Tensor<T>> {
        graph.head(head).and_then(|(_, h)| self.values[h.node].as_ref())
    }

    pub fn tap(&self, graph: &ModelGraph, name: &str) -> Option<&Tensor<T>> {
        graph.tap(name).and_then(|i| self.values[i].as_ref())
    }

    pub fn into_logits(mut self, graph: &ModelGraph, head: &str) -> Option<Tensor<T>> {
        graph.head(head).and_then(|(_, h)| self.values[h.node].take())
    }

    /// Batch statistics gathered in training mode.
    pub fn has_batch_stats(&self) -> bool {
        !self.stats.is_empty()
    }
}

fn conv_like<T: Real>(
    x: &Tensor<T>,
    spec: &super::graph::LayerSpec,
    p: &[Vec<T>],
    bufs: &[Vec<T>],
    batch: bool,
    stats: &mut Vec<(usize, usize, BnStats<T>)>,
    binding: usize,
) -> (Tensor<T>, Cache<T>) {
    let k = if spec.kind == LayerKind::Conv3x3 { 3 } else { 1 };
    let bn = spec.normalization == Normalization::BatchNorm;
    let mut y = ops::conv_forward(x, &p[0], if bn { None } else { Some(&p[1]) }, spec.out_channels, k);
    let cache = if bn {
        let running = if batch { None } else { Some((&bufs[0][..], &bufs[1][..])) };
        let (c, s) = ops::bn_forward(&mut y, &p[1], &p[2], running);
        if let Some(s) = s {
            stats.push((binding, 0, s));
        }
        Some(c)
    } else {
        None
    };
    if spec.activation == Activation::Relu {
        ops::relu_inplace(&mut y);
    }
    (y, Cache::Conv(cache))
}

/// Runs the graph on `inputs` (one tensor per graph input, equal shapes).
/// When `heads` is given only the nodes those heads depend on are evaluated.
pub fn forward<T: Real>(
    graph: &ModelGraph,
    params: &ParamStore<T>,
    inputs: &[&Tensor<T>],
    mode: Mode,
    heads: Option<&[&str]>,
) -> Result<ForwardPass<T>> {
    if inputs.len() != graph.input_arity {
        return Err(Error::ShapeMismatch(format!(
            "graph {} takes {} inputs, got {}",
            graph.name,
            graph.input_arity,
            inputs.len()
        )));
    }
    let first = inputs[0];
    let unit = 1usize << graph.depth;
    if first.h % unit != 0 || first.w % unit != 0 || first.h == 0 || first.w == 0 {
        return Err(Error::ShapeMismatch(format!(
            "spatial size {}x{} must be a positive multiple of {unit}",
            first.h, first.w
        )));
    }
    for t in inputs {
        if t.c != graph.input_channels || [t.n, t.h, t.w] != [first.n, first.h, first.w] {
            return Err(Error::ShapeMismatch(format!(
                "inputs must be {}x{}x{}x{}, got {:?}",
                first.n, graph.input_channels, first.h, first.w,
                t.shape()
            )));
        }
    }
    let targets: Vec<usize> = match heads {
        Some(names) => names
            .iter()
            .map(|n| graph.head(n).map(|(_, h)| h.node).ok_or_else(|| Error::MissingHead((*n).into())))
            .collect::<Result<_>>()?,
        None => graph.heads.iter().map(|h| h.node).collect(),
    };
    let needed = graph.ancestors(&targets);

    let n_nodes = graph.nodes.len();
    let mut values: Vec<Option<Tensor<T>>> = (0..n_nodes).map(|_| None).collect();
    let mut caches: Vec<Cache<T>> = (0..n_nodes).map(|_| Cache::Empty).collect();
    let mut stats = Vec::new();
    let mut next_input = 0;
    for (i, node) in graph.nodes.iter().enumerate() {
        if node.spec.kind == LayerKind::Input {
            if needed[i] {
                values[i] = Some(inputs[next_input].clone());
            }
            next_input += 1;
            continue;
        }
        if !needed[i] {
            continue;
        }
        let arg = |j: usize| values[node.inputs[j]].as_ref().expect("ancestor evaluated");
        let batch = mode.batch_stats(graph, i);
        let (y, cache) = match node.spec.kind {
            LayerKind::Input => unreachable!(),
            LayerKind::Conv3x3 | LayerKind::Conv1x1 | LayerKind::SoftmaxHead => {
                let b = node.binding.unwrap();
                let lp = &params.layers[b];
                let mut spec = node.spec;
                if spec.kind == LayerKind::SoftmaxHead {
                    spec.kind = LayerKind::Conv1x1;
                }
                conv_like(arg(0), &spec, &lp.tensors, &lp.buffers, batch, &mut stats, b)
            }
            LayerKind::ResidualBlock => {
                let b = node.binding.unwrap();
                let lp = &params.layers[b];
                let (p, bufs) = (&lp.tensors, &lp.buffers);
                let x = arg(0);
                let c = node.spec.out_channels;
                let mut h = ops::conv_forward(x, &p[0], None, c, 3);
                let (bn1, s1) = ops::bn_forward(&mut h, &p[1], &p[2], (!batch).then(|| (&bufs[0][..], &bufs[1][..])));
                ops::relu_inplace(&mut h);
                let r1 = h;
                let mut y = ops::conv_forward(&r1, &p[3], None, c, 3);
                let (bn2, s2) = ops::bn_forward(&mut y, &p[4], &p[5], (!batch).then(|| (&bufs[2][..], &bufs[3][..])));
                if let Some(s) = s1 {
                    stats.push((b, 0, s));
                }
                if let Some(s) = s2 {
                    stats.push((b, 1, s));
                }
                y.add_assign(x);
                ops::relu_inplace(&mut y);
                (y, Cache::Residual { bn1, r1, bn2 })
            }
            LayerKind::MaxPool2 => {
                let (y, a) = ops::maxpool_forward(arg(0));
                (y, Cache::Pool(a))
            }
            LayerKind::Upsample2 => {
                let lp = &params.layers[node.binding.unwrap()];
                (ops::upsample_forward(arg(0), &lp.tensors[0], &lp.tensors[1], node.spec.out_channels), Cache::Empty)
            }
            LayerKind::Concat => {
                let parts: Vec<&Tensor<T>> = (0..node.inputs.len()).map(arg).collect();
                (ops::concat_forward(&parts), Cache::Empty)
            }
            LayerKind::AbsDiff => (ops::abs_diff_forward(arg(0), arg(1)), Cache::Empty),
        };
        values[i] = Some(y);
        caches[i] = cache;
    }
    Ok(ForwardPass { values, caches, stats, mode })
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(s) => s.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Back-propagates head-logit gradients and returns parameter gradients
/// for the `trainable` groups. Gradients are not propagated into subgraphs
/// that contain no trainable parameter.
pub fn backward<T: Real>(
    graph: &ModelGraph,
    params: &ParamStore<T>,
    pass: &ForwardPass<T>,
    head_grads: Vec<(usize, Tensor<T>)>,
    trainable: GroupSet,
) -> Result<Grads<T>> {
    let n_nodes = graph.nodes.len();
    let mut needs = vec![false; n_nodes];
    for (i, node) in graph.nodes.iter().enumerate() {
        let own = graph.group_of(i).is_some_and(|g| trainable.contains(g));
        needs[i] = pass.values[i].is_some() && (own || node.inputs.iter().any(|&j| needs[j]));
    }
    let mut grads: Vec<Option<Tensor<T>>> = (0..n_nodes).map(|_| None).collect();
    for (h, g) in head_grads {
        let head = graph.heads.get(h).ok_or_else(|| Error::MissingHead(format!("#{h}")))?;
        let v = pass.values[head.node].as_ref().ok_or_else(|| Error::MissingHead(head.name.clone()))?;
        if v.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!("gradient for head {} has wrong shape", head.name)));
        }
        accumulate(&mut grads[head.node], g);
    }
    let mut out = Grads::empty(graph);
    for i in (0..n_nodes).rev() {
        if !needs[i] {
            continue;
        }
        let Some(mut dy) = grads[i].take() else { continue };
        let node = &graph.nodes[i];
        let value = |j: usize| pass.values[j].as_ref().expect("forward value");
        let learn = graph.group_of(i).is_some_and(|g| trainable.contains(g));
        let input_needs: Vec<bool> = node.inputs.iter().map(|&j| needs[j]).collect();
        match node.spec.kind {
            LayerKind::Input => {}
            LayerKind::Conv3x3 | LayerKind::Conv1x1 | LayerKind::SoftmaxHead => {
                let b = node.binding.unwrap();
                let p = &params.layers[b].tensors;
                let Cache::Conv(bn) = &pass.caches[i] else { unreachable!() };
                if node.spec.activation == Activation::Relu {
                    ops::relu_mask(&mut dy, value(i));
                }
                let k = if node.spec.kind == LayerKind::Conv3x3 { 3 } else { 1 };
                let x = value(node.inputs[0]);
                let dx = if learn {
                    let g = out.slot(graph, b);
                    let (w_grad, rest) = g.split_at_mut(1);
                    if let Some(cache) = bn {
                        let (gg, gb) = rest.split_at_mut(1);
                        ops::bn_backward(&mut dy, cache, &p[1], Some((&mut gg[0], &mut gb[0])));
                        ops::conv_backward(x, &p[0], &dy, k, &mut w_grad[0], None, input_needs[0])
                    } else {
                        ops::conv_backward(x, &p[0], &dy, k, &mut w_grad[0], Some(&mut rest[0]), input_needs[0])
                    }
                } else {
                    if let Some(cache) = bn {
                        ops::bn_backward(&mut dy, cache, &p[1], None);
                    }
                    let mut scratch = vec![T::zero(); p[0].len()];
                    ops::conv_backward(x, &p[0], &dy, k, &mut scratch, None, input_needs[0])
                };
                if let Some(dx) = dx {
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
            }
            LayerKind::ResidualBlock => {
                let b = node.binding.unwrap();
                let p = &params.layers[b].tensors;
                let Cache::Residual { bn1, r1, bn2 } = &pass.caches[i] else { unreachable!() };
                let x = value(node.inputs[0]);
                ops::relu_mask(&mut dy, value(i));
                let skip = dy.clone();
                let mut scratch: Vec<Vec<T>>;
                let g: &mut Vec<Vec<T>> = if learn {
                    out.slot(graph, b)
                } else {
                    scratch = p.iter().map(|t| vec![T::zero(); t.len()]).collect();
                    &mut scratch
                };
                let [gw1, gg1, gb1, gw2, gg2, gb2] = &mut g[..] else { unreachable!() };
                ops::bn_backward(&mut dy, bn2, &p[4], Some((gg2, gb2)));
                let mut dr1 = ops::conv_backward(r1, &p[3], &dy, 3, gw2, None, true).unwrap();
                ops::relu_mask(&mut dr1, r1);
                ops::bn_backward(&mut dr1, bn1, &p[1], Some((gg1, gb1)));
                let dx = ops::conv_backward(x, &p[0], &dr1, 3, gw1, None, input_needs[0]);
                if input_needs[0] {
                    let mut dx = dx.unwrap();
                    dx.add_assign(&skip);
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
            }
            LayerKind::MaxPool2 => {
                if input_needs[0] {
                    let Cache::Pool(arg) = &pass.caches[i] else { unreachable!() };
                    let x = value(node.inputs[0]);
                    accumulate(&mut grads[node.inputs[0]], ops::maxpool_backward(&dy, arg, x.h, x.w));
                }
            }
            LayerKind::Upsample2 => {
                let b = node.binding.unwrap();
                let p = &params.layers[b].tensors;
                let x = value(node.inputs[0]);
                let dx = if learn {
                    let g = out.slot(graph, b);
                    let (gw, gb) = g.split_at_mut(1);
                    ops::upsample_backward(x, &p[0], &dy, &mut gw[0], &mut gb[0], input_needs[0])
                } else {
                    let mut sw = vec![T::zero(); p[0].len()];
                    let mut sb = vec![T::zero(); p[1].len()];
                    ops::upsample_backward(x, &p[0], &dy, &mut sw, &mut sb, input_needs[0])
                };
                if let Some(dx) = dx {
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
            }
            LayerKind::Concat => {
                let chans: Vec<usize> = node.inputs.iter().map(|&j| value(j).c).collect();
                for (k, g) in ops::concat_backward(&dy, &chans).into_iter().enumerate() {
                    if input_needs[k] {
                        accumulate(&mut grads[node.inputs[k]], g);
                    }
                }
            }
            LayerKind::AbsDiff => {
                let (a, b) = (value(node.inputs[0]), value(node.inputs[1]));
                let (da, db) = ops::abs_diff_backward(a, b, &dy);
                if input_needs[0] {
                    accumulate(&mut grads[node.inputs[0]], da);
                }
                if input_needs[1] {
                    accumulate(&mut grads[node.inputs[1]], db);
                }
            }
        }
    }
    Ok(out)
}
