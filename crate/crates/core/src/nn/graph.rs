//! Declarative network description.
//!
//! A [`ModelGraph`] is a topologically ordered list of nodes. Learnable
//! nodes point at a parameter *binding*; two nodes sharing a binding are
//! weight-tied. Every binding belongs to exactly one [`ParamGroup`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    EncCd,
    DecCd,
    EncLcm,
    DecLcm,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [Self::EncCd, Self::DecCd, Self::EncLcm, Self::DecLcm];

    pub fn name(self) -> &'static str {
        match self {
            Self::EncCd => "Enc_CD",
            Self::DecCd => "Dec_CD",
            Self::EncLcm => "Enc_LCM",
            Self::DecLcm => "Dec_LCM",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// Small set of parameter groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct GroupSet(u8);

impl GroupSet {
    pub const NONE: GroupSet = GroupSet(0);
    pub const ALL: GroupSet = GroupSet(0b1111);
    pub const CD: GroupSet = GroupSet(0b0011);
    pub const LCM: GroupSet = GroupSet(0b1100);

    pub fn of(groups: &[ParamGroup]) -> Self {
        Self(groups.iter().fold(0, |a, g| a | g.bit()))
    }

    pub fn contains(self, g: ParamGroup) -> bool {
        self.0 & g.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Input,
    Conv3x3,
    Conv1x1,
    ResidualBlock,
    MaxPool2,
    Upsample2,
    Concat,
    AbsDiff,
    SoftmaxHead,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Input => "input",
            Self::Conv3x3 => "conv3x3",
            Self::Conv1x1 => "conv1x1",
            Self::ResidualBlock => "residual_block",
            Self::MaxPool2 => "maxpool2",
            Self::Upsample2 => "upsample2",
            Self::Concat => "concat",
            Self::AbsDiff => "abs_diff",
            Self::SoftmaxHead => "softmax_head",
        }
    }

    pub fn is_learnable(self) -> bool {
        matches!(self, Self::Conv3x3 | Self::Conv1x1 | Self::ResidualBlock | Self::Upsample2 | Self::SoftmaxHead)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    BatchNorm,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
    pub normalization: Normalization,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub spec: LayerSpec,
    pub inputs: Vec<usize>,
    pub binding: Option<usize>,
}

/// How a parameter tensor is initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    He { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSlot {
    pub len: usize,
    pub init: Init,
}

/// Storage layout of one parameter set, shared by all nodes tied to it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Binding {
    pub group: ParamGroup,
    pub kind: LayerKind,
    pub tensors: Vec<TensorSlot>,
    /// Running normalisation statistics (mean, variance pairs).
    pub buffers: Vec<TensorSlot>,
}

impl Binding {
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Head {
    pub name: String,
    pub node: usize,
    pub n_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelGraph {
    pub name: String,
    pub input_arity: usize,
    pub input_channels: usize,
    /// Number of ×½ poolings; spatial input dims must be multiples of `2^depth`.
    pub depth: usize,
    pub nodes: Vec<Node>,
    pub bindings: Vec<Binding>,
    pub heads: Vec<Head>,
    /// Named intermediate activations exported for reuse.
    pub taps: Vec<(String, usize)>,
}

fn param_layout(spec: &LayerSpec) -> (Vec<TensorSlot>, Vec<TensorSlot>) {
    let (ci, co) = (spec.in_channels, spec.out_channels);
    let slot = |len, init| TensorSlot { len, init };
    let bn = |t: &mut Vec<TensorSlot>, b: &mut Vec<TensorSlot>| {
        t.push(slot(co, Init::Ones));
        t.push(slot(co, Init::Zeros));
        b.push(slot(co, Init::Zeros));
        b.push(slot(co, Init::Ones));
    };
    let mut t = Vec::new();
    let mut b = Vec::new();
    match spec.kind {
        LayerKind::Conv3x3 | LayerKind::Conv1x1 => {
            let k = if spec.kind == LayerKind::Conv3x3 { 9 } else { 1 };
            t.push(slot(co * ci * k, Init::He { fan_in: ci * k }));
            if spec.normalization == Normalization::BatchNorm {
                bn(&mut t, &mut b);
            } else {
                t.push(slot(co, Init::Zeros));
            }
        }
        LayerKind::ResidualBlock => {
            for _ in 0..2 {
                t.push(slot(co * ci * 9, Init::He { fan_in: ci * 9 }));
                bn(&mut t, &mut b);
            }
        }
        LayerKind::Upsample2 => {
            t.push(slot(co * 4 * ci, Init::He { fan_in: ci }));
            t.push(slot(co, Init::Zeros));
        }
        LayerKind::SoftmaxHead => {
            t.push(slot(co * ci, Init::He { fan_in: ci }));
            t.push(slot(co, Init::Zeros));
        }
        _ => {}
    }
    (t, b)
}

impl ModelGraph {
    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn head(&self, name: &str) -> Option<(usize, &Head)> {
        self.heads.iter().enumerate().find(|(_, h)| h.name == name)
    }

    pub fn tap(&self, name: &str) -> Option<usize> {
        self.taps.iter().find(|(n, _)| n == name).map(|&(_, i)| i)
    }

    pub fn group_of(&self, node: usize) -> Option<ParamGroup> {
        self.nodes[node].binding.map(|b| self.bindings[b].group)
    }

    /// Node names per parameter group.
    pub fn param_groups(&self) -> BTreeMap<ParamGroup, Vec<String>> {
        let mut out = BTreeMap::new();
        for n in &self.nodes {
            if let Some(b) = n.binding {
                out.entry(self.bindings[b].group).or_insert_with(Vec::new).push(n.name.clone());
            }
        }
        out
    }

    /// Pairs of node names that share one parameter set.
    pub fn weight_ties(&self) -> Vec<(String, String)> {
        let mut first: BTreeMap<usize, usize> = BTreeMap::new();
        let mut ties = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(b) = n.binding {
                match first.get(&b) {
                    Some(&j) => ties.push((self.nodes[j].name.clone(), n.name.clone())),
                    None => {
                        first.insert(b, i);
                    }
                }
            }
        }
        ties
    }

    /// Learnable scalar count with ties counted once.
    pub fn param_count(&self) -> usize {
        self.bindings.iter().map(Binding::param_count).sum()
    }

    /// Learnable scalar count if every tie were broken.
    pub fn untied_param_count(&self) -> usize {
        self.nodes.iter().filter_map(|n| n.binding).map(|b| self.bindings[b].param_count()).sum()
    }

    pub fn group_param_count(&self, group: ParamGroup) -> usize {
        self.bindings.iter().filter(|b| b.group == group).map(Binding::param_count).sum()
    }

    /// Nodes needed to evaluate the given nodes.
    pub fn ancestors(&self, targets: &[usize]) -> Vec<bool> {
        let mut need = vec![false; self.nodes.len()];
        for &t in targets {
            need[t] = true;
        }
        for i in (0..self.nodes.len()).rev() {
            if need[i] {
                for &j in &self.nodes[i].inputs {
                    need[j] = true;
                }
            }
        }
        need
    }

    /// Checks structural invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGraph(m));
        let mut n_inputs = 0;
        for (i, n) in self.nodes.iter().enumerate() {
            if n.inputs.iter().any(|&j| j >= i) {
                return bad(format!("node {} consumes a later node (cycle or bad order)", n.name));
            }
            let in_c: usize = match n.spec.kind {
                LayerKind::Input => {
                    n_inputs += 1;
                    if !n.inputs.is_empty() {
                        return bad(format!("input {} has predecessors", n.name));
                    }
                    n.spec.in_channels
                }
                LayerKind::Concat => n.inputs.iter().map(|&j| self.nodes[j].spec.out_channels).sum(),
                LayerKind::AbsDiff => {
                    if n.inputs.len() != 2
                        || self.nodes[n.inputs[0]].spec.out_channels != self.nodes[n.inputs[1]].spec.out_channels
                    {
                        return bad(format!("abs_diff {} needs two equal-width inputs", n.name));
                    }
                    self.nodes[n.inputs[0]].spec.out_channels
                }
                _ => {
                    if n.inputs.len() != 1 {
                        return bad(format!("{} needs exactly one input", n.name));
                    }
                    self.nodes[n.inputs[0]].spec.out_channels
                }
            };
            if in_c != n.spec.in_channels {
                return bad(format!("{}: declared {} input channels, receives {}", n.name, n.spec.in_channels, in_c));
            }
            match n.spec.kind {
                LayerKind::ResidualBlock | LayerKind::MaxPool2 | LayerKind::AbsDiff
                    if n.spec.in_channels != n.spec.out_channels =>
                {
                    return bad(format!("{} must preserve channel count", n.name));
                }
                _ => {}
            }
            match (n.spec.kind.is_learnable(), n.binding) {
                (true, None) => return bad(format!("learnable node {} has no parameter group", n.name)),
                (false, Some(_)) => return bad(format!("node {} has parameters but is not learnable", n.name)),
                (true, Some(b)) => {
                    let Some(binding) = self.bindings.get(b) else {
                        return bad(format!("node {} references missing binding {b}", n.name));
                    };
                    let (t, bufs) = param_layout(&n.spec);
                    if binding.kind != n.spec.kind || binding.tensors != t || binding.buffers != bufs {
                        return bad(format!("node {} does not match the shape of its tied parameters", n.name));
                    }
                }
                (false, None) => {}
            }
        }
        if n_inputs != self.input_arity {
            return bad(format!("graph declares arity {} but has {} inputs", self.input_arity, n_inputs));
        }
        for h in &self.heads {
            if h.node >= self.nodes.len() || self.nodes[h.node].spec.kind != LayerKind::SoftmaxHead {
                return bad(format!("head {} does not point at a softmax head", h.name));
            }
            let reach = self.ancestors(&[h.node]);
            if !self.nodes.iter().enumerate().any(|(i, n)| reach[i] && n.spec.kind == LayerKind::Input) {
                return bad(format!("head {} is unreachable from the inputs", h.name));
            }
        }
        Ok(())
    }

    /// Human-readable structural description: one line per node, head,
    /// tie and group.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "graph {} arity={} input_channels={} depth={}",
            self.name, self.input_arity, self.input_channels, self.depth
        );
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = write!(
                s,
                "node {i} {} {} {}->{}",
                n.name,
                n.spec.kind.name(),
                n.spec.in_channels,
                n.spec.out_channels
            );
            if n.spec.activation == Activation::Relu {
                s.push_str(" relu");
            }
            if n.spec.normalization == Normalization::BatchNorm {
                s.push_str(" batch-norm");
            }
            if let Some(b) = n.binding {
                let _ = write!(s, " group={} binding={b}", self.bindings[b].group.name());
            }
            let _ = writeln!(s, " inputs={:?}", n.inputs);
        }
        for h in &self.heads {
            let _ = writeln!(s, "head {} node={} classes={}", h.name, self.nodes[h.node].name, h.n_classes);
        }
        for (name, i) in &self.taps {
            let _ = writeln!(s, "tap {name} node={}", self.nodes[*i].name);
        }
        for (a, b) in self.weight_ties() {
            let _ = writeln!(s, "tie {a} == {b}");
        }
        for (g, names) in self.param_groups() {
            let _ = writeln!(s, "group {} params={} nodes={}", g.name(), self.group_param_count(g), names.join(","));
        }
        s
    }
}

/// Incremental graph construction.
pub(crate) struct GraphBuilder {
    g: ModelGraph,
    group: ParamGroup,
    /// Bindings to reuse, in creation order, when building a tied branch.
    tie_queue: Option<alloc::collections::VecDeque<usize>>,
    created: Vec<usize>,
}

impl GraphBuilder {
    pub fn new(name: &str, arity: usize, input_channels: usize, depth: usize) -> Self {
        Self {
            g: ModelGraph {
                name: name.to_string(),
                input_arity: arity,
                input_channels,
                depth,
                nodes: Vec::new(),
                bindings: Vec::new(),
                heads: Vec::new(),
                taps: Vec::new(),
            },
            group: ParamGroup::EncCd,
            tie_queue: None,
            created: Vec::new(),
        }
    }

    pub fn set_group(&mut self, g: ParamGroup) {
        self.group = g;
    }

    /// Following learnable layers reuse `bindings` in order.
    pub fn tie_to(&mut self, bindings: Vec<usize>) {
        self.tie_queue = Some(bindings.into());
    }

    pub fn untie(&mut self) {
        assert!(self.tie_queue.as_ref().is_none_or(|q| q.is_empty()), "tied branch shape differs");
        self.tie_queue = None;
    }

    /// Drains the record of bindings created since the last call.
    pub fn take_created(&mut self) -> Vec<usize> {
        core::mem::take(&mut self.created)
    }

    fn channels(&self, id: usize) -> usize {
        self.g.nodes[id].spec.out_channels
    }

    fn push(&mut self, name: String, spec: LayerSpec, inputs: Vec<usize>) -> usize {
        let binding = if spec.kind.is_learnable() {
            let reused = self.tie_queue.as_mut().and_then(|q| q.pop_front());
            Some(match reused {
                Some(b) => b,
                None => {
                    let (tensors, buffers) = param_layout(&spec);
                    self.g.bindings.push(Binding { group: self.group, kind: spec.kind, tensors, buffers });
                    let b = self.g.bindings.len() - 1;
                    self.created.push(b);
                    b
                }
            })
        } else {
            None
        };
        self.g.nodes.push(Node { name, spec, inputs, binding });
        self.g.nodes.len() - 1
    }

    fn spec(kind: LayerKind, i: usize, o: usize, act: Activation, norm: Normalization) -> LayerSpec {
        LayerSpec { kind, in_channels: i, out_channels: o, activation: act, normalization: norm }
    }

    pub fn input(&mut self, name: &str, channels: usize) -> usize {
        let s = Self::spec(LayerKind::Input, channels, channels, Activation::None, Normalization::None);
        self.push(name.to_string(), s, Vec::new())
    }

    /// conv3x3 → batch-norm → relu.
    pub fn conv_bn_relu(&mut self, name: String, x: usize, out: usize) -> usize {
        let s = Self::spec(LayerKind::Conv3x3, self.channels(x), out, Activation::Relu, Normalization::BatchNorm);
        self.push(name, s, vec![x])
    }

    pub fn residual(&mut self, name: String, x: usize) -> usize {
        let c = self.channels(x);
        let s = Self::spec(LayerKind::ResidualBlock, c, c, Activation::Relu, Normalization::BatchNorm);
        self.push(name, s, vec![x])
    }

    pub fn maxpool(&mut self, name: String, x: usize) -> usize {
        let c = self.channels(x);
        let s = Self::spec(LayerKind::MaxPool2, c, c, Activation::None, Normalization::None);
        self.push(name, s, vec![x])
    }

    pub fn upsample(&mut self, name: String, x: usize, out: usize) -> usize {
        let s = Self::spec(LayerKind::Upsample2, self.channels(x), out, Activation::None, Normalization::None);
        self.push(name, s, vec![x])
    }

    pub fn concat(&mut self, name: String, parts: &[usize]) -> usize {
        let c = parts.iter().map(|&p| self.channels(p)).sum();
        let s = Self::spec(LayerKind::Concat, c, c, Activation::None, Normalization::None);
        self.push(name, s, parts.to_vec())
    }

    pub fn abs_diff(&mut self, name: String, a: usize, b: usize) -> usize {
        let c = self.channels(a);
        let s = Self::spec(LayerKind::AbsDiff, c, c, Activation::None, Normalization::None);
        self.push(name, s, vec![a, b])
    }

    pub fn head(&mut self, name: &str, x: usize, n_classes: usize) -> usize {
        let s = Self::spec(LayerKind::SoftmaxHead, self.channels(x), n_classes, Activation::None, Normalization::None);
        let id = self.push(format!("head.{name}"), s, vec![x]);
        self.g.heads.push(Head { name: name.to_string(), node: id, n_classes });
        id
    }

    pub fn tap(&mut self, name: String, node: usize) {
        self.g.taps.push((name, node));
    }

    pub fn finish(self) -> Result<ModelGraph> {
        self.g.validate()?;
        Ok(self.g)
    }
}
