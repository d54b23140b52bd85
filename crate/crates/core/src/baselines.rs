//! Unsupervised change detection: thresholded difference images and
//! PCA + k-means over local difference neighbourhoods.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nomenclature::Nomenclature;
use crate::raster::{Image, ImagePair, LabelMap};

/// Number of histogram bins used by [`threshold_otsu`].
pub const OTSU_BINS: usize = 256;
/// Default of [`threshold_fixed`], tuned for deep-feature magnitudes rather
/// than raw intensities.
pub const DEFAULT_FIXED_THRESHOLD: f64 = 2300.0;
pub const DEFAULT_BLOCK_SIZE: usize = 4;
pub const DEFAULT_COMPONENTS: usize = 3;
pub const KMEANS_MAX_ITER: usize = 50;
pub const KMEANS_TOL: f64 = 1e-6;

/// Per-pixel Euclidean norm of the channel-wise difference.
pub fn difference_image(pair: &ImagePair) -> Result<Image> {
    difference_of(&pair.image1, &pair.image2)
}

pub fn difference_of(a: &Image, b: &Image) -> Result<Image> {
    crate::raster::same_shape(a.shape(), b.shape(), "image1 vs image2")?;
    if a.channels() != b.channels() {
        return Err(Error::ShapeMismatch(format!("{} vs {} channels", a.channels(), b.channels())));
    }
    let c = a.channels();
    let data = a
        .data()
        .chunks_exact(c)
        .zip(b.data().chunks_exact(c))
        .map(|(p, q)| {
            let s: f64 = p.iter().zip(q).map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2)).sum();
            libm::sqrt(s) as f32
        })
        .collect();
    Image::new(a.height(), a.width(), 1, data)
}

fn single_channel(di: &Image) -> Result<()> {
    if di.channels() != 1 {
        return Err(Error::ShapeMismatch(format!("difference image must have 1 channel, got {}", di.channels())));
    }
    Ok(())
}

fn binary(di: &Image, changed: impl Fn(f32) -> bool) -> Result<LabelMap> {
    let data = di.data().iter().map(|&v| u8::from(changed(v))).collect();
    LabelMap::new(di.height(), di.width(), data, &Nomenclature::binary_change())
}

/// Histogram layout of [`threshold_otsu`]: bin `t` holds values in
/// `(min + t·w, min + (t+1)·w]` with `w = (max − min)/256`; bin 0 also
/// holds `min` itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bins {
    pub min: f64,
    pub width: f64,
}

impl Bins {
    pub fn of(values: &[f32]) -> Option<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in values {
            lo = lo.min(f64::from(v));
            hi = hi.max(f64::from(v));
        }
        (hi > lo).then(|| Self { min: lo, width: (hi - lo) / OTSU_BINS as f64 })
    }

    pub fn index(&self, v: f32) -> usize {
        let x = (f64::from(v) - self.min) / self.width;
        (libm::ceil(x) as i64 - 1).clamp(0, OTSU_BINS as i64 - 1) as usize
    }

    /// Upper edge of bin `t`.
    pub fn upper(&self, t: usize) -> f64 {
        self.min + (t + 1) as f64 * self.width
    }
}

/// `(n0·n1)·(μ0 − μ1)²` up to the constant `1/N²`, as the exact fraction
/// `(S0·n1 − S1·n0)² / (n0·n1)`.
fn between_class(n0: u64, s0: u64, n1: u64, s1: u64) -> (u128, u128) {
    let d = (u128::from(s0) * u128::from(n1)).abs_diff(u128::from(s1) * u128::from(n0));
    (d.saturating_mul(d), u128::from(n0) * u128::from(n1))
}

fn greater(a: (u128, u128), b: (u128, u128)) -> bool {
    match (a.0.checked_mul(b.1), b.0.checked_mul(a.1)) {
        (Some(x), Some(y)) => x > y,
        _ => (a.0 as f64 / a.1 as f64) > (b.0 as f64 / b.1 as f64),
    }
}

/// Otsu's threshold over a 256-bin histogram of bin indices. The threshold
/// is the upper edge of the last bin of the lower class; the first
/// maximiser wins ties. Pixels in bins above it are changed. A constant
/// image has no threshold and no change.
pub fn threshold_otsu(di: &Image) -> Result<(Option<f64>, LabelMap)> {
    single_channel(di)?;
    let Some(bins) = Bins::of(di.data()) else {
        return Ok((None, binary(di, |_| false)?));
    };
    let mut hist = [0u64; OTSU_BINS];
    for &v in di.data() {
        hist[bins.index(v)] += 1;
    }
    let n: u64 = hist.iter().sum();
    let s: u64 = hist.iter().enumerate().map(|(i, &h)| i as u64 * h).sum();
    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best: Option<(usize, (u128, u128))> = None;
    for (t, &h) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        n0 += h;
        s0 += t as u64 * h;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let v = between_class(n0, s0, n1, s - s0);
        if best.is_none_or(|(_, b)| greater(v, b)) {
            best = Some((t, v));
        }
    }
    let (t, _) = best.expect("a non-constant image has a non-empty split");
    let map = binary(di, |v| bins.index(v) > t)?;
    Ok((Some(bins.upper(t)), map))
}

/// Changed where the difference exceeds `t`.
pub fn threshold_fixed(di: &Image, t: f64) -> Result<LabelMap> {
    single_channel(di)?;
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!("threshold must be finite, got {t}")));
    }
    binary(di, |v| f64::from(v) > t)
}

/// Parameters of [`pca_kmeans_cd`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PcaKmeans {
    pub block_size: usize,
    pub n_components: usize,
    pub seed: u64,
}

impl Default for PcaKmeans {
    fn default() -> Self {
        Self { block_size: DEFAULT_BLOCK_SIZE, n_components: DEFAULT_COMPONENTS, seed: 0 }
    }
}

/// Features of every pixel: its `h × h` neighbourhood (offsets `−h/2 ..
/// h − h/2`, clamped at the borders) minus the block mean, projected on
/// the leading eigenvectors of the covariance of non-overlapping blocks.
fn pca_features(di: &Image, h: usize, s: usize) -> Vec<f64> {
    let (rows, cols) = di.shape();
    let d = h * h;
    let v = |y: usize, x: usize| f64::from(di.data()[y * cols + x]);
    let mut blocks = Vec::new();
    for by in 0..rows / h {
        for bx in 0..cols / h {
            for dy in 0..h {
                for dx in 0..h {
                    blocks.push(v(by * h + dy, bx * h + dx));
                }
            }
        }
    }
    let nb = blocks.len() / d;
    let mut mean = vec![0.0; d];
    for b in blocks.chunks_exact(d) {
        for (m, x) in mean.iter_mut().zip(b) {
            *m += x / nb as f64;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for b in blocks.chunks_exact(d) {
        for i in 0..d {
            let ci = b[i] - mean[i];
            for j in 0..d {
                cov[(i, j)] += ci * (b[j] - mean[j]) / nb as f64;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    // descending eigenvalue, index breaks ties
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let basis: Vec<Vec<f64>> = order[..s]
        .iter()
        .map(|&k| {
            let col: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            // sign convention: largest-magnitude entry positive
            let piv = col.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            if piv < 0.0 { col.iter().map(|x| -x).collect() } else { col }
        })
        .collect();
    let half = (h / 2) as isize;
    let mut feats = Vec::with_capacity(rows * cols * s);
    let mut patch = vec![0.0; d];
    for y in 0..rows {
        for x in 0..cols {
            for dy in 0..h {
                for dx in 0..h {
                    let yy = (y as isize + dy as isize - half).clamp(0, rows as isize - 1) as usize;
                    let xx = (x as isize + dx as isize - half).clamp(0, cols as isize - 1) as usize;
                    patch[dy * h + dx] = v(yy, xx) - mean[dy * h + dx];
                }
            }
            for b in &basis {
                feats.push(patch.iter().zip(b).map(|(p, e)| p * e).sum());
            }
        }
    }
    feats
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Two-means with seeded ++ initialisation. Equidistant points go to
/// cluster 0; an empty cluster keeps its centroid.
pub fn two_means(feats: &[f64], dim: usize, seed: u64) -> Vec<u8> {
    let n = feats.len() / dim;
    let point = |i: usize| &feats[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let d2: Vec<f64> = (0..n).map(|i| dist2(point(i), point(first))).collect();
    let total: f64 = d2.iter().sum();
    let second = if total > 0.0 {
        let mut r = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if r < d {
                pick = i;
                break;
            }
            r -= d;
        }
        pick
    } else {
        first
    };
    let mut cent = [point(first).to_vec(), point(second).to_vec()];
    let mut assign = vec![0u8; n];
    for _ in 0..KMEANS_MAX_ITER {
        for (i, a) in assign.iter_mut().enumerate() {
            *a = u8::from(dist2(point(i), &cent[1]) < dist2(point(i), &cent[0]));
        }
        let mut sums = [vec![0.0; dim], vec![0.0; dim]];
        let mut counts = [0usize; 2];
        for (i, &a) in assign.iter().enumerate() {
            counts[a as usize] += 1;
            for (s, x) in sums[a as usize].iter_mut().zip(point(i)) {
                *s += x;
            }
        }
        let mut shift = 0.0f64;
        for k in 0..2 {
            if counts[k] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            shift = shift.max(libm::sqrt(dist2(&next, &cent[k])));
            cent[k] = next;
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    assign
}

/// PCA + k-means change detection on the difference image. The cluster
/// with the larger mean difference magnitude is the change class.
pub fn pca_kmeans_cd(pair: &ImagePair, params: PcaKmeans) -> Result<LabelMap> {
    let PcaKmeans { block_size: h, n_components: s, seed } = params;
    if h < 2 {
        return Err(Error::InvalidArgument(format!("block size must be >= 2, got {h}")));
    }
    if s == 0 || s > h * h {
        return Err(Error::InvalidArgument(format!("need 1 <= components <= {}, got {s}", h * h)));
    }
    let (rows, cols) = pair.shape();
    if rows < h || cols < h {
        return Err(Error::InvalidArgument(format!("raster {rows}x{cols} is smaller than block size {h}")));
    }
    let di = difference_image(pair)?;
    if Bins::of(di.data()).is_none() {
        return binary(&di, |_| false);
    }
    let feats = pca_features(&di, h, s);
    let assign = two_means(&feats, s, seed);
    let mut mag = [0.0f64; 2];
    let mut cnt = [0usize; 2];
    for (&a, &v) in assign.iter().zip(di.data()) {
        mag[a as usize] += f64::from(v);
        cnt[a as usize] += 1;
    }
    let mean = |k: usize| (cnt[k] > 0).then(|| mag[k] / cnt[k] as f64);
    let change = match (mean(0), mean(1)) {
        (Some(a), Some(b)) if b > a => 1u8,
        (Some(a), Some(b)) if a > b => 0u8,
        _ => return binary(&di, |_| false),
    };
    let data = assign.iter().map(|&a| u8::from(a == change)).collect();
    LabelMap::new(rows, cols, data, &Nomenclature::binary_change())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, v: Vec<f32>) -> Image {
        Image::new(h, w, 1, v).unwrap()
    }

    #[test]
    fn difference_examples() {
        let a = img(1, 1, vec![5.0]);
        let b = img(1, 1, vec![9.0]);
        assert_eq!(difference_of(&a, &b).unwrap().data(), &[4.0]);
        let a = Image::new(1, 1, 3, vec![3.0, 4.0, 7.0]).unwrap();
        let b = Image::new(1, 1, 3, vec![0.0, 0.0, 7.0]).unwrap();
        assert_eq!(difference_of(&a, &b).unwrap().data(), &[5.0]);
        assert_eq!(difference_of(&a, &a).unwrap().data(), &[0.0]);
    }

    #[test]
    fn otsu_splits_two_peaks() {
        let mut v = vec![10.0f32; 50];
        v.extend(vec![200.0f32; 30]);
        let (t, map) = threshold_otsu(&img(8, 10, v)).unwrap();
        let t = t.unwrap();
        assert!(t > 10.0 && t < 200.0);
        assert_eq!(map.data().iter().filter(|&&c| c == 1).count(), 30);
    }

    #[test]
    fn otsu_on_constant_image_has_no_threshold() {
        let (t, map) = threshold_otsu(&img(2, 2, vec![3.0; 4])).unwrap();
        assert_eq!(t, None);
        assert!(map.data().iter().all(|&c| c == 0));
    }

    #[test]
    fn fixed_threshold_extremes() {
        let di = img(1, 4, vec![0.0, 1.0, 5.0, 2.0]);
        assert!(threshold_fixed(&di, 5.0).unwrap().data().iter().all(|&c| c == 0));
        assert!(threshold_fixed(&di, -1.0).unwrap().data().iter().all(|&c| c == 1));
        assert!(threshold_fixed(&di, f64::NAN).is_err());
    }

    #[test]
    fn bins_follow_the_half_open_rule() {
        let b = Bins::of(&[0.0, 256.0]).unwrap();
        assert_eq!(b.index(0.0), 0);
        assert_eq!(b.index(1.0), 0);
        assert_eq!(b.index(1.5), 1);
        assert_eq!(b.index(256.0), 255);
    }

    #[test]
    fn identical_centroids_resolve_to_cluster_zero() {
        let feats = vec![1.0; 10];
        assert_eq!(two_means(&feats, 1, 3), vec![0; 10]);
    }

    #[test]
    fn pca_kmeans_rejects_bad_parameters() {
        let a = Image::filled(3, 3, 1, 0.0);
        let pair = ImagePair::new("p", a.clone(), a, None, None, None).unwrap();
        assert!(pca_kmeans_cd(&pair, PcaKmeans { block_size: 4, ..Default::default() }).is_err());
        assert!(pca_kmeans_cd(&pair, PcaKmeans { block_size: 1, ..Default::default() }).is_err());
        assert!(pca_kmeans_cd(&pair, PcaKmeans { block_size: 2, n_components: 5, seed: 0 }).is_err());
        let out = pca_kmeans_cd(&pair, PcaKmeans { block_size: 2, n_components: 2, seed: 0 }).unwrap();
        assert!(out.data().iter().all(|&c| c == 0));
    }
}
