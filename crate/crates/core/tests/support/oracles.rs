//! Brute-force references for metrics and baselines.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semcd_core::baselines::{difference_image, pca_kmeans_cd, threshold_otsu, PcaKmeans};
use semcd_core::metrics::ConfusionMatrix;
use semcd_core::nomenclature::{ClassEntry, Nomenclature};
use semcd_core::raster::{Image, ImagePair, LabelMap};

/// A random nomenclature with `k` scored classes, sometimes preceded by an
/// unscored code 0.
pub fn random_nomenclature(rng: &mut ChaCha8Rng, k: usize) -> Nomenclature {
    let unscored = k > 2 && rng.random_bool(0.5);
    let mut classes = Vec::new();
    if unscored {
        classes.push(ClassEntry::new(0, "none", false));
    }
    let first = u8::from(unscored);
    for i in 0..k as u8 {
        classes.push(ClassEntry::new(first + i, format!("c{i}"), true));
    }
    Nomenclature::new(format!("rand{k}{}", u8::from(unscored)), classes).unwrap()
}

pub struct MetricCase {
    pub nom: Nomenclature,
    pub truth: LabelMap,
    pub pred: LabelMap,
    pub mask: Option<Vec<bool>>,
}

pub fn random_metric_case(seed: u64) -> MetricCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..=6);
    let nom = random_nomenclature(&mut rng, k);
    let codes: Vec<u8> = nom.classes().iter().map(|c| c.code).collect();
    let (h, w) = (rng.random_range(1..=64), rng.random_range(1..=64));
    // skewed class frequencies make the ratios less symmetric
    let bias = rng.random_range(0.0..0.9);
    let draw = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(bias) {
            codes[codes.len() - 1]
        } else {
            codes[rng.random_range(0..codes.len())]
        }
    };
    let t: Vec<u8> = (0..h * w).map(|_| draw(&mut rng)).collect();
    let p: Vec<u8> = t.iter().map(|&c| if rng.random_bool(0.6) { c } else { draw(&mut rng) }).collect();
    let mask = rng.random_bool(0.3).then(|| (0..h * w).map(|_| rng.random_bool(0.8)).collect());
    MetricCase {
        truth: LabelMap::new(h, w, t, &nom).unwrap(),
        pred: LabelMap::new(h, w, p, &nom).unwrap(),
        nom,
        mask,
    }
}

/// Outcome of comparing the library against a per-pixel recount.
#[derive(Debug, Default)]
pub struct MetricCheck {
    pub count_mismatches: usize,
    pub max_ratio_err: f64,
    pub definedness_mismatches: usize,
}

fn cmp(a: Option<f64>, b: Option<f64>, out: &mut MetricCheck) {
    match (a, b) {
        (Some(x), Some(y)) => out.max_ratio_err = out.max_ratio_err.max((x - y).abs()),
        (None, None) => {}
        _ => out.definedness_mismatches += 1,
    }
}

pub fn check_metric_case(case: &MetricCase, out: &mut MetricCheck) {
    let MetricCase { nom, truth, pred, mask } = case;
    let mut cm = ConfusionMatrix::new(nom);
    cm.accumulate(nom, truth, pred, mask.as_deref()).unwrap();
    let codes: Vec<u8> = nom.classes().iter().map(|c| c.code).collect();
    let counted = |i: usize| mask.as_ref().is_none_or(|m| m[i]) && nom.is_scored(truth.data()[i]);

    for (ti, &tc) in codes.iter().enumerate() {
        for (pi, &pc) in codes.iter().enumerate() {
            let n = (0..truth.len()).filter(|&i| counted(i) && truth.data()[i] == tc && pred.data()[i] == pc).count();
            if cm.get(ti, pi) != n as u64 {
                out.count_mismatches += 1;
            }
        }
    }
    let n = (0..truth.len()).filter(|&i| counted(i)).count();
    let report = match cm.metrics() {
        Ok(r) => r,
        Err(_) => {
            if n != 0 {
                out.definedness_mismatches += 1;
            }
            return;
        }
    };
    let nf = n as f64;
    let agree = (0..truth.len()).filter(|&i| counted(i) && truth.data()[i] == pred.data()[i]).count() as f64;
    let p_o = agree / nf;
    let p_e: f64 = codes
        .iter()
        .map(|&c| {
            let t = (0..truth.len()).filter(|&i| counted(i) && truth.data()[i] == c).count() as f64;
            let p = (0..truth.len()).filter(|&i| counted(i) && pred.data()[i] == c).count() as f64;
            t * p
        })
        .sum::<f64>()
        / (nf * nf);
    let div = |a: f64, b: f64| (b != 0.0).then(|| a / b);
    cmp(report.total_accuracy, Some(p_o), out);
    cmp(report.kappa, div(p_o - p_e, 1.0 - p_e), out);
    if codes.len() == 2 {
        let c = |t: u8, p: u8| (0..truth.len()).filter(|&i| counted(i) && truth.data()[i] == codes[t as usize] && pred.data()[i] == codes[p as usize]).count() as f64;
        let (tp, fp, fn_) = (c(1, 1), c(0, 1), c(1, 0));
        cmp(report.precision, div(tp, tp + fp), out);
        cmp(report.recall, div(tp, tp + fn_), out);
        cmp(report.dice, div(2.0 * tp, 2.0 * tp + fp + fn_), out);
    } else if report.precision.is_some() || report.recall.is_some() || report.dice.is_some() {
        out.definedness_mismatches += 1;
    }
}

/// Exhaustive Otsu: every split of a 256-bin histogram, between-class
/// variance `w0·w1·(μ0 − μ1)²` evaluated directly from the pixels, lowest
/// split index on ties. Returns the split index and the map.
pub fn otsu_oracle(values: &[f32]) -> Option<(usize, Vec<u8>)> {
    let lo = values.iter().map(|&v| f64::from(v)).fold(f64::INFINITY, f64::min);
    let hi = values.iter().map(|&v| f64::from(v)).fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return None;
    }
    let w = (hi - lo) / 256.0;
    // first bin whose upper edge is not below the value
    let bin = |v: f32| (0..256).find(|&b| f64::from(v) - lo <= (b + 1) as f64 * w).unwrap_or(255);
    let bins: Vec<usize> = values.iter().map(|&v| bin(v)).collect();
    let n = bins.len() as f64;
    let mut best: Option<(usize, f64)> = None;
    for t in 0..255 {
        let lower: Vec<f64> = bins.iter().filter(|&&b| b <= t).map(|&b| b as f64).collect();
        let upper: Vec<f64> = bins.iter().filter(|&&b| b > t).map(|&b| b as f64).collect();
        if lower.is_empty() || upper.is_empty() {
            continue;
        }
        let (w0, w1) = (lower.len() as f64 / n, upper.len() as f64 / n);
        let mu0 = lower.iter().sum::<f64>() / lower.len() as f64;
        let mu1 = upper.iter().sum::<f64>() / upper.len() as f64;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if best.is_none_or(|(_, b)| var > b * (1.0 + 1e-12)) {
            best = Some((t, var));
        }
    }
    let (t, _) = best?;
    Some((t, bins.iter().map(|&b| u8::from(b > t)).collect()))
}

pub fn random_difference_image(seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rng.random_range(4..=32), rng.random_range(4..=32));
    let kind = rng.random_range(0..3);
    let data = (0..h * w)
        .map(|_| match kind {
            0 => rng.random_range(0.0f32..1000.0),
            1 => (if rng.random_bool(0.2) { 150.0 } else { 20.0 }) + rng.random_range(0.0f32..40.0),
            _ => rng.random_range(0u8..6) as f32 * 17.0,
        })
        .collect();
    Image::new(h, w, 1, data).unwrap()
}

/// Does `threshold_otsu` agree with the exhaustive search on this image?
pub fn otsu_matches_oracle(di: &Image) -> bool {
    let (t, map) = threshold_otsu(di).unwrap();
    match otsu_oracle(di.data()) {
        None => t.is_none() && map.data().iter().all(|&v| v == 0),
        Some((bin, want)) => {
            let lo = di.data().iter().map(|&v| f64::from(v)).fold(f64::INFINITY, f64::min);
            let hi = di.data().iter().map(|&v| f64::from(v)).fold(f64::NEG_INFINITY, f64::max);
            let edge = lo + (bin + 1) as f64 * (hi - lo) / 256.0;
            t.is_some_and(|t| (t - edge).abs() <= 1e-9 * (1.0 + edge.abs())) && map.data() == want.as_slice()
        }
    }
}

pub const SQUARE_SIDE: usize = 96;

/// Constant background with one bright square changed in the second image.
pub fn changed_square_pair() -> (ImagePair, Vec<u8>) {
    let n = SQUARE_SIDE;
    let inside = |y: usize, x: usize| (32..64).contains(&y) && (40..72).contains(&x);
    let img1 = Image::filled(n, n, 3, 60.0);
    let mut data = Vec::with_capacity(n * n * 3);
    let mut truth = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let v = if inside(y, x) { 220.0 } else { 60.0 };
            data.extend_from_slice(&[v, v, v]);
            truth.push(u8::from(inside(y, x)));
        }
    }
    let img2 = Image::new(n, n, 3, data).unwrap();
    (ImagePair::new("square", img1, img2, None, None, None).unwrap(), truth)
}

pub fn iou(pred: &[u8], truth: &[u8]) -> f64 {
    let inter = pred.iter().zip(truth).filter(|(&p, &t)| p == 1 && t == 1).count();
    let union = pred.iter().zip(truth).filter(|(&p, &t)| p == 1 || t == 1).count();
    inter as f64 / union as f64
}

/// Change-class IoU of Otsu and PCA k-means on the changed-square fixture.
pub fn square_ious() -> (f64, f64) {
    let (pair, truth) = changed_square_pair();
    let di = difference_image(&pair).unwrap();
    let (_, otsu) = threshold_otsu(&di).unwrap();
    let pk = pca_kmeans_cd(&pair, PcaKmeans::default()).unwrap();
    (iou(otsu.data(), &truth), iou(pk.data(), &truth))
}
