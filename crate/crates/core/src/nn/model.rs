//! The three network topologies and a graph-plus-parameters bundle.
//!
//! All three share one encoder/decoder layout. Encoder level `l` works at
//! `1/2^l` resolution with `base_width · 2^l` channels: a channel-changing
//! conv3x3 (the stem at level 0), `blocks_per_level` residual blocks, and a
//! 2×2 max-pool. The activation before the pool is the level's skip. The
//! decoder mirrors it: learned ×2 upsampling, concatenation with the skip(s),
//! a fusing conv3x3, residual blocks. A 1×1 softmax head closes each branch.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{GraphBuilder, ModelGraph, ParamGroup};
use super::params::ParamStore;
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// Early-fusion residual change network over the concatenated pair.
    FcEfRes,
    /// Single-image land-cover network exporting its encoder skips as taps.
    LcmBranch,
    /// Two weight-shared land-cover branches plus a change branch fed with
    /// absolute differences of the branch taps.
    Integrated,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Self::FcEfRes => "fc-ef-res",
            Self::LcmBranch => "lcm-branch",
            Self::Integrated => "integrated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fc-ef-res" => Some(Self::FcEfRes),
            "lcm-branch" => Some(Self::LcmBranch),
            "integrated" => Some(Self::Integrated),
            _ => None,
        }
    }
}

/// Everything needed to rebuild a graph deterministically.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub input_channels: usize,
    /// Output classes; for the integrated net, land-cover classes per LCM head.
    pub n_classes: usize,
    pub depth: usize,
    pub blocks_per_level: usize,
    pub base_width: usize,
}

/// Depth, residual blocks per level, base width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Preset {
    pub depth: usize,
    pub blocks_per_level: usize,
    pub base_width: usize,
}

impl Preset {
    /// Scale of the original FC-EF-Res on small change datasets.
    pub const OSCD: Preset = Preset { depth: 4, blocks_per_level: 1, base_width: 16 };
    /// Deeper and wider variant for large aerial mosaics.
    pub const HRSCD: Preset = Preset { depth: 5, blocks_per_level: 2, base_width: 32 };
    /// Small enough to train on one CPU core in minutes.
    pub const DESK: Preset = Preset { depth: 3, blocks_per_level: 1, base_width: 8 };

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "oscd" => Some(Self::OSCD),
            "hrscd" => Some(Self::HRSCD),
            "desk" => Some(Self::DESK),
            _ => None,
        }
    }
}

impl ModelSpec {
    pub fn new(arch: Architecture, input_channels: usize, n_classes: usize, preset: Preset) -> Self {
        Self {
            arch,
            input_channels,
            n_classes,
            depth: preset.depth,
            blocks_per_level: preset.blocks_per_level,
            base_width: preset.base_width,
        }
    }

    pub fn build(&self) -> Result<ModelGraph> {
        match self.arch {
            Architecture::FcEfRes => {
                build_fc_ef_res(self.input_channels, self.n_classes, self.depth, self.blocks_per_level, self.base_width)
            }
            Architecture::LcmBranch => {
                build_lcm_branch(self.input_channels, self.n_classes, self.depth, self.blocks_per_level, self.base_width)
            }
            Architecture::Integrated => {
                build_integrated(self.input_channels, self.n_classes, self.depth, self.blocks_per_level, self.base_width)
            }
        }
    }
}

fn check_args(input_channels: usize, n_classes: usize, depth: usize, base_width: usize) -> Result<()> {
    if depth < 1 || depth > 8 {
        return Err(Error::InvalidArgument(format!("depth must be in 1..=8, got {depth}")));
    }
    if input_channels == 0 || base_width == 0 || n_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need input_channels > 0, base_width > 0, n_classes >= 2 (got {input_channels}, {base_width}, {n_classes})"
        )));
    }
    Ok(())
}

fn width(base: usize, level: usize) -> usize {
    base << level
}

/// Returns the per-level skips and the pooled bottom.
fn encoder(b: &mut GraphBuilder, x: usize, prefix: &str, depth: usize, blocks: usize, base: usize) -> (Vec<usize>, usize) {
    let mut cur = x;
    let mut skips = Vec::with_capacity(depth);
    for l in 0..depth {
        let name = if l == 0 { format!("{prefix}enc0.stem") } else { format!("{prefix}enc{l}.widen") };
        cur = b.conv_bn_relu(name, cur, width(base, l));
        for k in 0..blocks {
            cur = b.residual(format!("{prefix}enc{l}.res{k}"), cur);
        }
        skips.push(cur);
        cur = b.maxpool(format!("{prefix}enc{l}.pool"), cur);
    }
    (skips, cur)
}

/// Decoder; `extra[l]` is an optional additional skip at level `l`.
fn decoder(
    b: &mut GraphBuilder,
    bottom: usize,
    skips: &[usize],
    extra: &[Option<usize>],
    prefix: &str,
    blocks: usize,
    base: usize,
) -> usize {
    let mut cur = bottom;
    for l in (0..skips.len()).rev() {
        let up = b.upsample(format!("{prefix}dec{l}.up"), cur, width(base, l));
        let mut parts = vec![up, skips[l]];
        parts.extend(extra[l]);
        let cat = b.concat(format!("{prefix}dec{l}.cat"), &parts);
        cur = b.conv_bn_relu(format!("{prefix}dec{l}.fuse"), cat, width(base, l));
        for k in 0..blocks {
            cur = b.residual(format!("{prefix}dec{l}.res{k}"), cur);
        }
    }
    cur
}

pub fn build_fc_ef_res(
    input_channels: usize,
    n_classes: usize,
    depth: usize,
    blocks_per_level: usize,
    base_width: usize,
) -> Result<ModelGraph> {
    check_args(input_channels, n_classes, depth, base_width)?;
    let mut b = GraphBuilder::new("fc-ef-res", 2, input_channels, depth);
    let i1 = b.input("image1", input_channels);
    let i2 = b.input("image2", input_channels);
    let fused = b.concat("fuse".into(), &[i1, i2]);
    b.set_group(ParamGroup::EncCd);
    let (skips, bottom) = encoder(&mut b, fused, "", depth, blocks_per_level, base_width);
    b.set_group(ParamGroup::DecCd);
    let top = decoder(&mut b, bottom, &skips, &vec![None; depth], "", blocks_per_level, base_width);
    b.head("change", top, n_classes);
    b.finish()
}

/// Builds one land-cover branch into `b`, returning (head-ready top, taps).
fn lcm_branch_into(
    b: &mut GraphBuilder,
    x: usize,
    prefix: &str,
    depth: usize,
    blocks: usize,
    base: usize,
) -> (usize, Vec<usize>) {
    b.set_group(ParamGroup::EncLcm);
    let (skips, bottom) = encoder(b, x, prefix, depth, blocks, base);
    b.set_group(ParamGroup::DecLcm);
    let top = decoder(b, bottom, &skips, &vec![None; depth], prefix, blocks, base);
    (top, skips)
}

pub fn build_lcm_branch(
    input_channels: usize,
    n_classes: usize,
    depth: usize,
    blocks_per_level: usize,
    base_width: usize,
) -> Result<ModelGraph> {
    check_args(input_channels, n_classes, depth, base_width)?;
    let mut b = GraphBuilder::new("lcm-branch", 1, input_channels, depth);
    let x = b.input("image", input_channels);
    let (top, taps) = lcm_branch_into(&mut b, x, "", depth, blocks_per_level, base_width);
    b.head("lcm", top, n_classes);
    for (l, t) in taps.into_iter().enumerate() {
        b.tap(format!("enc{l}"), t);
    }
    b.finish()
}

pub fn build_integrated(
    input_channels: usize,
    n_lcm_classes: usize,
    depth: usize,
    blocks_per_level: usize,
    base_width: usize,
) -> Result<ModelGraph> {
    check_args(input_channels, n_lcm_classes, depth, base_width)?;
    let mut b = GraphBuilder::new("integrated", 2, input_channels, depth);
    let i1 = b.input("image1", input_channels);
    let i2 = b.input("image2", input_channels);

    b.take_created();
    let (top1, taps1) = lcm_branch_into(&mut b, i1, "lcm1.", depth, blocks_per_level, base_width);
    b.head("lcm1", top1, n_lcm_classes);
    let branch = b.take_created();
    b.tie_to(branch);
    let (top2, taps2) = lcm_branch_into(&mut b, i2, "lcm2.", depth, blocks_per_level, base_width);
    b.head("lcm2", top2, n_lcm_classes);
    b.untie();
    for l in 0..depth {
        b.tap(format!("lcm1.enc{l}"), taps1[l]);
        b.tap(format!("lcm2.enc{l}"), taps2[l]);
    }

    let fused = b.concat("cd.fuse".into(), &[i1, i2]);
    b.set_group(ParamGroup::EncCd);
    let (skips, bottom) = encoder(&mut b, fused, "cd.", depth, blocks_per_level, base_width);
    let diffs: Vec<Option<usize>> =
        (0..depth).map(|l| Some(b.abs_diff(format!("cd.diff{l}"), taps1[l], taps2[l]))).collect();
    b.set_group(ParamGroup::DecCd);
    let top = decoder(&mut b, bottom, &skips, &diffs, "cd.", blocks_per_level, base_width);
    b.head("change", top, 2);
    b.finish()
}

/// Graph, its build arguments and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub graph: ModelGraph,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let graph = spec.build()?;
        let params = ParamStore::init(&graph, seed);
        Ok(Self { spec, graph, params })
    }

    pub fn from_parts(spec: ModelSpec, params: ParamStore<T>) -> Result<Self> {
        let graph = spec.build()?;
        if params.layers.len() != graph.bindings.len()
            || params.layers.iter().zip(&graph.bindings).any(|(l, b)| {
                l.tensors.len() != b.tensors.len()
                    || l.buffers.len() != b.buffers.len()
                    || l.tensors.iter().zip(&b.tensors).any(|(t, s)| t.len() != s.len)
                    || l.buffers.iter().zip(&b.buffers).any(|(t, s)| t.len() != s.len)
            })
        {
            return Err(Error::ShapeMismatch(String::from("parameters do not fit the model graph")));
        }
        Ok(Self { spec, graph, params })
    }
}
