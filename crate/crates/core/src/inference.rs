//! Tiled prediction over whole rasters and decoding of head outputs into
//! change products.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::change::{compare_lcms, compose_semantic_change, SemanticChangeMap};
use crate::config::Strategy;
use crate::data::InputNorm;
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::nn::{forward, Mode, Model, Tensor};
use crate::nomenclature::{ChangePairs, Nomenclature};
use crate::raster::{Image, ImagePair, LabelMap};
use crate::tiling::{extract_window, to_planar, Stitcher, TileSpec};

/// Full-resolution planar scores of one head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadScores {
    pub head: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub scores: Vec<f32>,
}

impl HeadScores {
    /// Channel of the highest score per pixel; the first maximum wins.
    pub fn argmax(&self) -> Vec<usize> {
        let plane = self.height * self.width;
        (0..plane)
            .map(|p| {
                let mut best = 0;
                for c in 1..self.channels {
                    if self.scores[c * plane + p] > self.scores[best * plane + p] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// The tiling actually used for a `height × width` raster: tiles never
/// exceed the shorter side rounded up to a multiple of `unit`, so padding
/// stays below one network unit.
pub fn fit_tile_spec(spec: &TileSpec, height: usize, width: usize, unit: usize) -> Result<TileSpec> {
    spec.validate()?;
    if spec.tile_size % unit != 0 {
        return Err(Error::InvalidTileSpec(format!("tile size {} must be a multiple of {unit}", spec.tile_size)));
    }
    let cover = height.min(width).div_ceil(unit) * unit;
    let tile = spec.tile_size.min(cover);
    Ok(TileSpec { tile_size: tile, stride: spec.stride.min(tile), pad_mode: spec.pad_mode })
}

/// Runs `model` in evaluation mode over tiles of the standardised
/// `images` and averages overlapping tile scores (pre-softmax) per pixel.
pub fn predict_tiled(model: &Model<f32>, norm: &InputNorm, images: &[&Image], spec: &TileSpec) -> Result<Vec<HeadScores>> {
    let graph = &model.graph;
    if images.len() != graph.input_arity {
        return Err(Error::ShapeMismatch(format!(
            "model {} takes {} images, got {}",
            graph.name,
            graph.input_arity,
            images.len()
        )));
    }
    let (h, w) = images[0].shape();
    let c = images[0].channels();
    for im in images {
        crate::raster::same_shape(im.shape(), (h, w), "input images")?;
        if im.channels() != c || c != norm.channels() || c != graph.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "model {} expects {} channels, got {}",
                graph.name,
                graph.input_channels,
                im.channels()
            )));
        }
    }
    let spec = fit_tile_spec(spec, h, w, 1 << graph.depth)?;
    let t = spec.tile_size;
    let origins = spec.origins(h, w)?;
    let normed: Vec<Vec<f32>> = images
        .iter()
        .map(|im| {
            let mut d = im.data().to_vec();
            norm.apply(&mut d);
            d
        })
        .collect();
    let mut stitchers: Vec<Stitcher> = graph.heads.iter().map(|hd| Stitcher::new(hd.n_classes, h, w)).collect();
    for &origin in &origins {
        let tensors: Vec<Tensor<f32>> = normed
            .iter()
            .map(|d| {
                let win = extract_window(d, h, w, c, origin, t, spec.pad_mode);
                Tensor::from_vec(1, c, t, t, to_planar(&win, t, t, c))
            })
            .collect();
        let refs: Vec<&Tensor<f32>> = tensors.iter().collect();
        let pass = forward(graph, &model.params, &refs, Mode::Eval, None)?;
        for (hd, st) in graph.heads.iter().zip(&mut stitchers) {
            let logits = pass.value(hd.node).ok_or_else(|| Error::MissingHead(hd.name.clone()))?;
            st.add(origin, t, &logits.data)?;
        }
    }
    graph
        .heads
        .iter()
        .zip(stitchers)
        .map(|(hd, st)| {
            Ok(HeadScores { head: hd.name.clone(), channels: hd.n_classes, height: h, width: w, scores: st.finish()? })
        })
        .collect()
}

/// Which network a trained strategy holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    /// Single-image land-cover network.
    LandCover,
    /// Early-fusion change network.
    Change,
    /// Integrated multitask network.
    Integrated,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::LandCover => "land_cover",
            Role::Change => "change",
            Role::Integrated => "integrated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Role::LandCover, Role::Change, Role::Integrated].into_iter().find(|r| r.name() == s)
    }
}

/// Networks of a trained strategy plus what is needed to run them.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyModels {
    pub strategy: Strategy,
    pub land_cover: Nomenclature,
    pub norm: InputNorm,
    pub models: Vec<(Role, Model<f32>)>,
}

impl StrategyModels {
    pub fn model(&self, role: Role) -> Option<&Model<f32>> {
        self.models.iter().find(|(r, _)| *r == role).map(|(_, m)| m)
    }

    pub fn model_mut(&mut self, role: Role) -> Option<&mut Model<f32>> {
        self.models.iter_mut().find(|(r, _)| *r == role).map(|(_, m)| m)
    }

    /// The networks a strategy needs.
    pub fn roles(strategy: Strategy) -> &'static [Role] {
        match strategy {
            Strategy::S1 => &[Role::LandCover],
            Strategy::S2 => &[Role::Change],
            Strategy::S3 => &[Role::LandCover, Role::Change],
            Strategy::S4_1 | Strategy::S4_2 => &[Role::Integrated],
        }
    }
}

/// Scores of one pair under the names `lcm1`, `lcm2` and `change` (the
/// latter over change-pair classes for S2).
#[derive(Clone, Debug, PartialEq)]
pub struct PairScores {
    pub heads: Vec<HeadScores>,
}

impl PairScores {
    pub fn get(&self, head: &str) -> Option<&HeadScores> {
        self.heads.iter().find(|h| h.head == head)
    }
}

fn missing(role: Role) -> Error {
    Error::InvalidArgument(format!("no {} network in the trained strategy", role.name()))
}

pub fn predict_pair(models: &StrategyModels, pair: &ImagePair, spec: &TileSpec) -> Result<PairScores> {
    let mut heads = Vec::new();
    for &role in StrategyModels::roles(models.strategy) {
        let m = models.model(role).ok_or_else(|| missing(role))?;
        match role {
            Role::LandCover => {
                for (name, img) in [("lcm1", &pair.image1), ("lcm2", &pair.image2)] {
                    let mut s = predict_tiled(m, &models.norm, &[img], spec)?;
                    let mut hs = s.remove(0);
                    hs.head = name.to_string();
                    heads.push(hs);
                }
            }
            Role::Change | Role::Integrated => {
                heads.extend(predict_tiled(m, &models.norm, &[&pair.image1, &pair.image2], spec)?);
            }
        }
    }
    Ok(PairScores { heads })
}

/// Label products of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub change: LabelMap,
    pub lcm1: Option<LabelMap>,
    pub lcm2: Option<LabelMap>,
    pub semantic: Option<SemanticChangeMap>,
}

fn head<'a>(s: &'a PairScores, name: &str) -> Result<&'a HeadScores> {
    s.get(name).ok_or_else(|| Error::MissingHead(name.to_string()))
}

fn lcm_of(s: &HeadScores, nom: &Nomenclature) -> Result<LabelMap> {
    if s.channels != nom.n_scored() {
        return Err(Error::ShapeMismatch(format!(
            "head {} has {} classes, nomenclature {} scores {}",
            s.head,
            s.channels,
            nom.id(),
            nom.n_scored()
        )));
    }
    let data = s.argmax().into_iter().map(|i| nom.code_of_head(i).unwrap()).collect();
    LabelMap::new(s.height, s.width, data, nom)
}

/// Turns head scores into change products following the strategy.
pub fn decode_strategy(scores: &PairScores, strategy: Strategy, land_cover: &Nomenclature) -> Result<Decoded> {
    match strategy {
        Strategy::S1 => {
            let l1 = lcm_of(head(scores, "lcm1")?, land_cover)?;
            let l2 = lcm_of(head(scores, "lcm2")?, land_cover)?;
            let change = compare_lcms(land_cover, &l1, &l2)?;
            let semantic = compose_semantic_change(&change, &l1, &l2)?;
            Ok(Decoded { change, lcm1: Some(l1), lcm2: Some(l2), semantic: Some(semantic) })
        }
        Strategy::S2 => {
            let pairs = ChangePairs::from_land_cover(land_cover)?;
            let s = head(scores, "change")?;
            if s.channels != pairs.nomenclature().len() {
                return Err(Error::ShapeMismatch(format!(
                    "change head has {} classes, change-pair nomenclature has {}",
                    s.channels,
                    pairs.nomenclature().len()
                )));
            }
            let arg = s.argmax();
            let n = arg.len();
            let (mut mask, mut from, mut to) = (vec![0u8; n], vec![0u8; n], vec![0u8; n]);
            for (i, &a) in arg.iter().enumerate() {
                if let Some((f, t)) = pairs.decode(a as u8) {
                    mask[i] = 1;
                    from[i] = f;
                    to[i] = t;
                }
            }
            let change = LabelMap::new(s.height, s.width, mask.clone(), &Nomenclature::binary_change())?;
            let semantic = SemanticChangeMap { height: s.height, width: s.width, change: mask, from, to };
            Ok(Decoded { change, lcm1: None, lcm2: None, semantic: Some(semantic) })
        }
        Strategy::S3 | Strategy::S4_1 | Strategy::S4_2 => {
            let l1 = lcm_of(head(scores, "lcm1")?, land_cover)?;
            let l2 = lcm_of(head(scores, "lcm2")?, land_cover)?;
            let c = head(scores, "change")?;
            if c.channels != 2 {
                return Err(Error::ShapeMismatch(format!("change head has {} classes, expected 2", c.channels)));
            }
            let bin = Nomenclature::binary_change();
            let data = c.argmax().into_iter().map(|i| bin.code_of_head(i).unwrap()).collect();
            let change = LabelMap::new(c.height, c.width, data, &bin)?;
            let semantic = compose_semantic_change(&change, &l1, &l2)?;
            Ok(Decoded { change, lcm1: Some(l1), lcm2: Some(l2), semantic: Some(semantic) })
        }
    }
}

/// Confusion matrices of one pair: binary change (pixels without a
/// land-cover label on either date excluded) and land cover over both
/// dates when both prediction and truth exist.
pub fn score_pair(decoded: &Decoded, pair: &ImagePair, land_cover: &Nomenclature) -> Result<(ConfusionMatrix, Option<ConfusionMatrix>)> {
    let bin = Nomenclature::binary_change();
    let truth = match (&pair.change, &pair.lcm1, &pair.lcm2) {
        (Some(c), _, _) => c.clone(),
        (None, Some(a), Some(b)) => compare_lcms(land_cover, a, b)?,
        _ => return Err(Error::InvalidArgument(format!("pair {}: no change ground truth", pair.pair_id))),
    };
    let mask: Option<Vec<bool>> = match (&pair.lcm1, &pair.lcm2) {
        (None, None) => None,
        (a, b) => Some(
            (0..truth.len())
                .map(|i| {
                    a.as_ref().is_none_or(|m| land_cover.is_scored(m.data()[i]))
                        && b.as_ref().is_none_or(|m| land_cover.is_scored(m.data()[i]))
                })
                .collect(),
        ),
    };
    let mut cd = ConfusionMatrix::new(&bin);
    cd.accumulate(&bin, &truth, &decoded.change, mask.as_deref())?;
    let mut lcm = None;
    for (pred, truth) in [(&decoded.lcm1, &pair.lcm1), (&decoded.lcm2, &pair.lcm2)] {
        if let (Some(p), Some(t)) = (pred, truth) {
            let m = lcm.get_or_insert_with(|| ConfusionMatrix::new(land_cover));
            m.accumulate(land_cover, t, p, None)?;
        }
    }
    Ok((cd, lcm))
}
