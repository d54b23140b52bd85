//! Turning image pairs into network inputs and per-head training targets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::loss::IGNORE;
use crate::nn::{Real, Tensor};
use crate::nomenclature::{ChangePairs, Nomenclature};
use crate::raster::{Image, ImagePair};
use crate::tiling::to_planar;
use crate::weights::{class_weights, ClassCounts, WeightWarning};

/// Per-channel standardisation applied to every input image.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl InputNorm {
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    /// Mean and standard deviation of every channel over both images of
    /// every pair.
    pub fn fit<'a>(pairs: impl IntoIterator<Item = &'a ImagePair>) -> Result<Self> {
        let mut pairs = pairs.into_iter().peekable();
        let first = pairs.peek().ok_or_else(|| Error::InvalidArgument("no pairs to fit input statistics".into()))?;
        let c = first.image1.channels();
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        let mut n = 0u64;
        for p in pairs {
            for img in [&p.image1, &p.image2] {
                if img.channels() != c {
                    return Err(Error::ShapeMismatch(format!(
                        "pair {}: {} channels, expected {c}",
                        p.pair_id,
                        img.channels()
                    )));
                }
                for px in img.data().chunks_exact(c) {
                    for (k, &v) in px.iter().enumerate() {
                        sum[k] += f64::from(v);
                        sq[k] += f64::from(v) * f64::from(v);
                    }
                }
                n += (img.data().len() / c) as u64;
            }
        }
        let n = n as f64;
        let mean: Vec<f32> = sum.iter().map(|s| (s / n) as f32).collect();
        let std = sum
            .iter()
            .zip(&sq)
            .map(|(s, q)| {
                let m = s / n;
                let v = (q / n - m * m).max(0.0);
                let sd = libm::sqrt(v);
                if sd > 1e-6 { sd as f32 } else { 1.0 }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Standardises interleaved pixels in place.
    pub fn apply(&self, data: &mut [f32]) {
        let c = self.channels();
        for px in data.chunks_exact_mut(c) {
            for (k, v) in px.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
    }

    /// Standardised planar `1 × c × h × w` tensor of a whole image.
    pub fn tensor<T: Real>(&self, img: &Image) -> Result<Tensor<T>> {
        if img.channels() != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "image has {} channels, model expects {}",
                img.channels(),
                self.channels()
            )));
        }
        let mut d = img.data().to_vec();
        self.apply(&mut d);
        let planar = to_planar(&d, img.height(), img.width(), img.channels());
        Ok(Tensor::from_vec(1, img.channels(), img.height(), img.width(), planar.iter().map(|&v| T::of(f64::from(v))).collect()))
    }
}

/// One of the eight symmetries of the square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dihedral {
    pub rot: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { rot: 0, flip: false };

    pub fn random<R: Rng>(rng: &mut R) -> Self {
        Self { rot: rng.random_range(0..4), flip: rng.random() }
    }

    /// Source coordinates of output pixel `(y, x)` in an `n × n` square.
    fn source(self, y: usize, x: usize, n: usize) -> (usize, usize) {
        let (y, x) = if self.flip { (y, n - 1 - x) } else { (y, x) };
        match self.rot {
            0 => (y, x),
            1 => (x, n - 1 - y),
            2 => (n - 1 - y, n - 1 - x),
            _ => (n - 1 - x, y),
        }
    }

    /// Applies the transform to every `n × n` plane of `data`.
    pub fn apply<T: Copy + Default>(self, data: &[T], n: usize) -> Vec<T> {
        if self == Self::IDENTITY {
            return data.to_vec();
        }
        let plane = n * n;
        let mut out = vec![T::default(); data.len()];
        for (src, dst) in data.chunks_exact(plane).zip(out.chunks_exact_mut(plane)) {
            for y in 0..n {
                for x in 0..n {
                    let (sy, sx) = self.source(y, x, n);
                    dst[y * n + x] = src[sy * n + sx];
                }
            }
        }
        out
    }
}

/// A square window cut from a pair: standardised planar images and raw
/// label codes.
#[derive(Clone, Debug, PartialEq)]
pub struct Crop {
    pub size: usize,
    pub image1: Vec<f32>,
    pub image2: Vec<f32>,
    pub lcm1: Option<Vec<u8>>,
    pub lcm2: Option<Vec<u8>>,
    pub change: Option<Vec<u8>>,
}

fn window<T: Copy + Default>(data: &[T], width: usize, channels: usize, y0: usize, x0: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * n * channels);
    for y in y0..y0 + n {
        let row = (y * width + x0) * channels;
        out.extend_from_slice(&data[row..row + n * channels]);
    }
    out
}

/// Cuts an `n × n` crop at `origin` and applies `t` to every layer.
pub fn crop(pair: &ImagePair, norm: &InputNorm, origin: (usize, usize), n: usize, t: Dihedral) -> Result<Crop> {
    let (h, w) = pair.shape();
    if origin.0 + n > h || origin.1 + n > w {
        return Err(Error::InvalidArgument(format!(
            "pair {}: crop of {n} at {:?} exceeds {h}x{w}",
            pair.pair_id, origin
        )));
    }
    let c = pair.image1.channels();
    let img = |im: &Image| {
        let mut d = window(im.data(), w, c, origin.0, origin.1, n);
        norm.apply(&mut d);
        t.apply(&to_planar(&d, n, n, c), n)
    };
    let lab = |m: &Option<crate::raster::LabelMap>| m.as_ref().map(|m| t.apply(&window(m.data(), w, 1, origin.0, origin.1, n), n));
    Ok(Crop {
        size: n,
        image1: img(&pair.image1),
        image2: img(&pair.image2),
        lcm1: lab(&pair.lcm1),
        lcm2: lab(&pair.lcm2),
        change: lab(&pair.change),
    })
}

/// Uniformly placed crop with an optional random symmetry.
pub fn random_crop<R: Rng>(pair: &ImagePair, norm: &InputNorm, n: usize, augment: bool, rng: &mut R) -> Result<Crop> {
    let (h, w) = pair.shape();
    if n > h || n > w {
        return Err(Error::InvalidArgument(format!("pair {}: crop size {n} exceeds {h}x{w}", pair.pair_id)));
    }
    let y = rng.random_range(0..=h - n);
    let x = rng.random_range(0..=w - n);
    let t = if augment { Dihedral::random(rng) } else { Dihedral::IDENTITY };
    crop(pair, norm, (y, x), n, t)
}

/// Land-cover head targets; unscored codes are ignored.
pub fn land_cover_targets(codes: &[u8], nom: &Nomenclature) -> Result<Vec<u32>> {
    codes
        .iter()
        .map(|&c| match nom.position(c) {
            None => Err(Error::UnknownCode { code: c, nomenclature: nom.id().into() }),
            Some(_) => Ok(nom.head_index(c).map_or(IGNORE, |i| i as u32)),
        })
        .collect()
}

/// Whether the pixel has a usable land-cover label on both dates (true
/// when no land-cover map is available).
fn both_labelled(nom: &Nomenclature, lcm1: Option<&[u8]>, lcm2: Option<&[u8]>, i: usize) -> bool {
    lcm1.is_none_or(|m| nom.is_scored(m[i])) && lcm2.is_none_or(|m| nom.is_scored(m[i]))
}

/// Binary change head targets (0 unchanged, 1 changed). Pixels without a
/// land-cover label on either date are ignored. Without a change map the
/// targets come from comparing the land-cover maps.
pub fn change_targets(nom: &Nomenclature, lcm1: Option<&[u8]>, lcm2: Option<&[u8]>, change: Option<&[u8]>, len: usize) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        if !both_labelled(nom, lcm1, lcm2, i) {
            out.push(IGNORE);
            continue;
        }
        let t = match (change, lcm1, lcm2) {
            (Some(c), _, _) => match c[i] {
                0 => 0,
                1 => 1,
                v => return Err(Error::UnknownCode { code: v, nomenclature: crate::nomenclature::CHANGE_ID.into() }),
            },
            (None, Some(a), Some(b)) => u32::from(a[i] != b[i]),
            _ => return Err(Error::InvalidArgument("change targets need a change map or both land-cover maps".into())),
        };
        out.push(t);
    }
    Ok(out)
}

/// Change-pair head targets. Changed pixels whose land-cover labels agree
/// are contradictory and ignored.
pub fn change_pair_targets(pairs: &ChangePairs, nom: &Nomenclature, lcm1: &[u8], lcm2: &[u8], change: Option<&[u8]>) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(lcm1.len());
    for i in 0..lcm1.len() {
        let (a, b) = (lcm1[i], lcm2[i]);
        if !nom.is_scored(a) || !nom.is_scored(b) {
            out.push(IGNORE);
            continue;
        }
        let changed = change.map_or(a != b, |c| c[i] == 1);
        let t = match (changed, a == b) {
            (false, _) => 0,
            (true, true) => IGNORE,
            (true, false) => u32::from(pairs.encode(a, b).ok_or_else(|| Error::UnknownCode { code: a, nomenclature: nom.id().into() })?),
        };
        out.push(t);
    }
    Ok(out)
}

/// Counts of head targets over many target vectors, keyed by head index.
pub fn head_counts<'a>(targets: impl IntoIterator<Item = &'a [u32]>) -> ClassCounts {
    let mut c = ClassCounts::default();
    for t in targets {
        for &v in t {
            if v != IGNORE {
                c.0[v as usize] += 1;
            }
        }
    }
    c
}

/// Inverse-frequency weights over `n_heads` head channels.
pub fn head_weights(counts: &ClassCounts, n_heads: usize, clip_max: f64) -> Result<(Vec<f64>, Vec<WeightWarning>)> {
    let classes = (0..n_heads).map(|i| crate::nomenclature::ClassEntry::new(i as u8, format!("{i}"), true)).collect();
    let nom = Nomenclature::new("head", classes)?;
    let (w, warn) = class_weights(counts, &nom, clip_max)?;
    Ok((w.weights, warn))
}
