//! Deterministic synthetic image pairs with exact land-cover and change
//! ground truth.
//!
//! The first land-cover map is a Voronoi partition with a few axis-aligned
//! rectangles on top; the second repaints random rectangles with a new
//! class until the changed fraction reaches the requested density. Each
//! class has a mean colour, each region a colour offset, each pixel noise.
//! The second acquisition also gets a global gain and offset.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::change::compare_lcms;
use crate::error::{Error, Result};
use crate::nomenclature::Nomenclature;
use crate::raster::{Image, ImagePair, LabelMap};

/// Mean RGB colour of the five L1 land-cover classes.
pub const L1_PALETTE: [[f32; 3]; 5] = [
    [180.0, 80.0, 80.0],
    [170.0, 160.0, 90.0],
    [60.0, 120.0, 60.0],
    [90.0, 110.0, 125.0],
    [50.0, 70.0, 140.0],
];

/// Smallest raster side the generator accepts.
pub const MIN_SIZE: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_pairs: usize,
    pub size: usize,
    pub change_density: f64,
    /// Mean colour per scored class, in head order.
    pub palette: Vec<[f32; 3]>,
    /// Per-pixel noise standard deviation.
    pub noise: f32,
    /// Half-range of the uniform per-region colour offset.
    pub region_jitter: f32,
}

impl SynthSpec {
    pub fn new(seed: u64, n_pairs: usize, size: usize, change_density: f64) -> Self {
        Self { seed, n_pairs, size, change_density, palette: L1_PALETTE.to_vec(), noise: 8.0, region_jitter: 12.0 }
    }
}

fn validate(spec: &SynthSpec, nom: &Nomenclature) -> Result<()> {
    if !(0.0..=1.0).contains(&spec.change_density) {
        return Err(Error::InvalidArgument(format!("change density must be in [0, 1], got {}", spec.change_density)));
    }
    if spec.size < MIN_SIZE {
        return Err(Error::InvalidArgument(format!(
            "size {} is too small to place any polygon (minimum {MIN_SIZE})",
            spec.size
        )));
    }
    if spec.palette.len() != nom.n_scored() {
        return Err(Error::InvalidArgument(format!(
            "palette has {} colours, nomenclature {} scores {} classes",
            spec.palette.len(),
            nom.id(),
            nom.n_scored()
        )));
    }
    if nom.n_scored() < 2 {
        return Err(Error::InvalidArgument("need at least two scored classes".into()));
    }
    if !(spec.noise >= 0.0 && spec.region_jitter >= 0.0) {
        return Err(Error::InvalidArgument("noise and jitter must be non-negative".into()));
    }
    Ok(())
}

/// All pairs, named `pair_000`, `pair_001`, ...
pub fn generate(spec: &SynthSpec, nom: &Nomenclature) -> Result<Vec<ImagePair>> {
    validate(spec, nom)?;
    (0..spec.n_pairs).map(|i| generate_pair(spec, nom, i)).collect()
}

struct Rect {
    y: usize,
    x: usize,
    h: usize,
    w: usize,
}

impl Rect {
    fn random<R: Rng>(rng: &mut R, size: usize, lo: usize, hi: usize) -> Self {
        let h = rng.random_range(lo..=hi);
        let w = rng.random_range(lo..=hi);
        Rect { y: rng.random_range(0..=size - h), x: rng.random_range(0..=size - w), h, w }
    }

    fn pixels(&self, size: usize) -> impl Iterator<Item = usize> + '_ {
        (self.y..self.y + self.h).flat_map(move |y| (self.x..self.x + self.w).map(move |x| y * size + x))
    }
}

/// The `index`-th pair of the dataset described by `spec`.
pub fn generate_pair(spec: &SynthSpec, nom: &Nomenclature, index: usize) -> Result<ImagePair> {
    validate(spec, nom)?;
    let n = spec.size;
    let npx = n * n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let codes = nom.scored_codes();
    let k = codes.len();

    // first map: Voronoi cells, then rectangles
    let n_sites = ((n / 32) * (n / 32)).max(4);
    let sites: Vec<(usize, usize, usize)> =
        (0..n_sites).map(|_| (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..k))).collect();
    let mut region = vec![0usize; npx];
    let mut class = vec![0usize; npx];
    for y in 0..n {
        for x in 0..n {
            let mut best = (usize::MAX, 0);
            for (s, &(sy, sx, _)) in sites.iter().enumerate() {
                let d = sy.abs_diff(y).pow(2) + sx.abs_diff(x).pow(2);
                if d < best.0 {
                    best = (d, s);
                }
            }
            region[y * n + x] = best.1;
            class[y * n + x] = sites[best.1].2;
        }
    }
    let mut n_regions = n_sites;
    for _ in 0..(n / 64).max(1) {
        let r = Rect::random(&mut rng, n, (n / 10).max(2), (n / 4).max(2));
        let c = rng.random_range(0..k);
        for p in r.pixels(n) {
            region[p] = n_regions;
            class[p] = c;
        }
        n_regions += 1;
    }

    // second map: repaint rectangles until the changed fraction is reached
    let target = libm::round(spec.change_density * npx as f64) as usize;
    let slack = (npx / 100).max(16);
    let mut class2 = class.clone();
    let mut region2 = region.clone();
    let mut changed = 0usize;
    let mut attempts = 0;
    while changed + slack / 2 < target && attempts < 10_000 {
        attempts += 1;
        let remaining = (target - changed) as f64;
        let hi = ((libm::sqrt(remaining * 1.3)) as usize).clamp(4, (n / 3).max(4));
        let r = Rect::random(&mut rng, n, 4.min(hi), hi);
        let c = rng.random_range(0..k);
        let delta: isize = r
            .pixels(n)
            .map(|p| isize::from(c != class[p]) - isize::from(class2[p] != class[p]))
            .sum();
        let after = changed as isize + delta;
        if delta <= 0 || after as usize > target + slack {
            continue;
        }
        for p in r.pixels(n) {
            class2[p] = c;
            region2[p] = if c != class[p] { n_regions } else { region[p] };
        }
        n_regions += 1;
        changed = after as usize;
    }

    let jitter: Vec<[f32; 3]> = (0..n_regions)
        .map(|_| {
            let mut j = [0.0f32; 3];
            for v in &mut j {
                *v = if spec.region_jitter > 0.0 { rng.random_range(-spec.region_jitter..=spec.region_jitter) } else { 0.0 };
            }
            j
        })
        .collect();
    let gain: f32 = rng.random_range(0.9..=1.1);
    let offset: [f32; 3] = [rng.random_range(-10.0..=10.0), rng.random_range(-10.0..=10.0), rng.random_range(-10.0..=10.0)];
    let noise = Normal::new(0.0f32, spec.noise).map_err(|e| Error::InvalidArgument(format!("noise: {e}")))?;
    let mut paint = |cls: &[usize], reg: &[usize], gain: f32, offset: [f32; 3]| -> Result<Image> {
        let mut data = Vec::with_capacity(npx * 3);
        for p in 0..npx {
            let base = spec.palette[cls[p]];
            for ch in 0..3 {
                let v = gain * (base[ch] + jitter[reg[p]][ch]) + offset[ch] + noise.sample(&mut rng);
                data.push(libm::roundf(v.clamp(0.0, 255.0)));
            }
        }
        Image::new(n, n, 3, data)
    };
    let image1 = paint(&class, &region, 1.0, [0.0; 3])?;
    let image2 = paint(&class2, &region2, gain, offset)?;
    let lcm1 = LabelMap::new(n, n, class.iter().map(|&c| codes[c]).collect(), nom)?;
    let lcm2 = LabelMap::new(n, n, class2.iter().map(|&c| codes[c]).collect(), nom)?;
    let change = compare_lcms(nom, &lcm1, &lcm2)?;
    ImagePair::new(format!("pair_{index:03}"), image1, image2, Some(lcm1), Some(lcm2), Some(change))
}
